#!/usr/bin/env python3
"""
Component-tagged structured logging for checks and command failures
"""
import logging
import json
import time
from typing import Optional, Dict, Any

logger = logging.getLogger(__name__)


class ErrorLogger:
    """Logs under a component tag; errors also come back as a JSON-ready record"""

    def __init__(self, component_name: str):
        self.component_name = component_name

    def _emit(self, level: int, message: str, details: Optional[Dict[str, Any]] = None):
        logger.log(level, f"[{self.component_name}] {message}")
        if details:
            # numpy scalars and enums fall back to str
            logger.log(level, f"Details: {json.dumps(details, indent=2, default=str)}")

    def log_error(self, error_type: str, message: str, details: Optional[Dict[str, Any]] = None,
                  exception: Optional[Exception] = None) -> Dict[str, Any]:
        """
        Record with timestamp, component, error_type, message and details; the
        exception type and text are added when one is given
        """
        record: Dict[str, Any] = {
            "timestamp": time.time(),
            "component": self.component_name,
            "error_type": error_type,
            "message": message,
            "details": details or {},
        }
        self._emit(logging.ERROR, f"{error_type}: {message}", details)
        if exception is not None:
            record["exception"] = {"type": type(exception).__name__, "message": str(exception)}
            self._emit(logging.ERROR, f"Caused by {type(exception).__name__}: {exception}")
        return record

    def log_exception(self, error) -> Dict[str, Any]:
        """Record for an HHKError, keyed by its code"""
        return self.log_error(error.code, error.message, error.details)

    def log_warning(self, message: str, details: Optional[Dict[str, Any]] = None):
        self._emit(logging.WARNING, message, details)

    def log_info(self, message: str, details: Optional[Dict[str, Any]] = None):
        self._emit(logging.INFO, message, details)
