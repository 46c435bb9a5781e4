#!/usr/bin/env python3
"""
Structured error types shared by the numerical core and the CLI
"""
from typing import Optional, Dict, Any


class HHKError(Exception):
    """Base error carrying a stable code, an exit code and structured details"""
    code = "error"
    exit_code = 1

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        return {"code": self.code, "message": self.message, "details": self.details}


class ConfigError(HHKError):
    code = "config_error"


class OrderingViolation(HHKError):
    code = "ordering_violation"


class NonPositive(HHKError):
    code = "non_positive"


class DomainError(HHKError):
    code = "domain_error"


class NoRealRoot(HHKError):
    code = "no_real_root"


class KernelOutOfBounds(HHKError):
    code = "kernel_out_of_bounds"


class NonPositiveK(HHKError):
    code = "non_positive_k"


class NotMonotone(HHKError):
    code = "not_monotone"


class LatticeTooCoarse(HHKError):
    code = "lattice_too_coarse"


class TooLarge(HHKError):
    code = "too_large"


class RegionEmpty(HHKError):
    code = "region_empty"


class TailTooLarge(HHKError):
    code = "tail_too_large"


class IllPosed(HHKError):
    """The well-posedness inequality fails; the optimisation problem has no finite value"""
    code = "ill_posed"
    exit_code = 2


class VerificationFailure(HHKError):
    code = "verification_failure"
    exit_code = 3


class ViolationFound(VerificationFailure):
    code = "violation_found"


class ConditionViolated(VerificationFailure):
    code = "condition_violated"
