#!/usr/bin/env python3
"""
Configuration Manager for model parameters and Monte Carlo settings
"""
import json
import logging
import os
from pathlib import Path
from typing import Dict, Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from core.errors import ConfigError
from core.model import ModelParams
from core.verify import MCConfig

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_DIR = Path(__file__).resolve().parent.parent / "config"

# CLI flag -> MCConfig alias
MC_OVERRIDES = {"seed": "seed", "paths": "nPaths", "dt": "dt", "horizon": "horizon"}


class RunConfig(BaseModel):
    """Everything one command needs; echoed into the output header"""
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    params: ModelParams
    mc: MCConfig
    options: Dict[str, Any] = Field(default_factory=dict)
    out_path: Optional[str] = Field(None, alias="outPath")
    format: Literal["csv", "json"] = "json"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "params": self.params.to_dict(),
            "mc": self.mc.to_dict(),
            "options": self.options,
            "outPath": self.out_path,
            "format": self.format,
        }


class ConfigManager:
    def __init__(self, config_dir: Optional[str] = None):
        self.config_dir = Path(config_dir or os.getenv("HHK_CONFIG_DIR") or DEFAULT_CONFIG_DIR)
        self.defaults: Dict[str, Dict[str, Any]] = {}
        self.load_defaults()

    def load_defaults(self):
        """Load params.json and mc.json from the config directory"""
        for name in ("params", "mc"):
            path = self.config_dir / f"{name}.json"
            try:
                if not path.exists():
                    logger.error(f"Config file not found: {path}")
                    continue
                with open(path, 'r') as f:
                    self.defaults[name] = json.load(f)
            except Exception as e:
                logger.error(f"Failed to load {name} configuration: {e}")
        logger.info(f"Loaded defaults {sorted(self.defaults)} from {self.config_dir}")

    def get_default_params(self) -> ModelParams:
        if "params" not in self.defaults:
            raise ConfigError("No default parameters", {"configDir": str(self.config_dir)})
        return ModelParams.from_dict(self.defaults["params"])

    def get_mc_config(self, overrides: Optional[Dict[str, Any]] = None) -> MCConfig:
        """Default MC settings, HHK_WORKERS, then explicit overrides"""
        data = dict(self.defaults.get("mc", {}))
        workers = os.getenv("HHK_WORKERS")
        if workers:
            data["nWorkers"] = workers
        data.update(overrides or {})
        try:
            return MCConfig.model_validate(data)
        except ValidationError as e:
            raise ConfigError("Invalid Monte Carlo settings", {"errors": e.errors(include_url=False)}) from e

    def read_file(self, path: str) -> Dict[str, Any]:
        try:
            with open(path, 'r') as f:
                data = json.load(f)
        except FileNotFoundError as e:
            raise ConfigError(f"Config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config file is not valid JSON: {path}", {"error": str(e)}) from e
        if not isinstance(data, dict):
            raise ConfigError("Config file must hold a JSON object", {"path": path})
        return data

    def load_run_config(self, path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None,
                        options: Optional[Dict[str, Any]] = None, default_format: str = "json") -> RunConfig:
        """
        Build a RunConfig from the defaults, an optional --config file and CLI flags

        The file holds either a RunConfig object {params, mc, options, outPath, format}
        or a flat ModelParams object.
        """
        overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
        file_data = self.read_file(path) if path else {}
        if file_data and "params" not in file_data and "mc" not in file_data:
            file_data = {"params": file_data}

        params = (ModelParams.from_dict(file_data["params"]) if "params" in file_data
                  else self.get_default_params())
        mc_data = dict(file_data.get("mc", {}))
        mc_data.update({MC_OVERRIDES[k]: v for k, v in overrides.items() if k in MC_OVERRIDES})
        mc = self.get_mc_config(mc_data)

        merged_options = dict(file_data.get("options", {}))
        merged_options.update(options or {})
        try:
            config = RunConfig(
                params=params,
                mc=mc,
                options=merged_options,
                outPath=overrides.get("out", file_data.get("outPath")),
                format=overrides.get("format", file_data.get("format", default_format)),
            )
        except ValidationError as e:
            raise ConfigError("Invalid run configuration", {"errors": e.errors(include_url=False)}) from e
        logger.info(f"Run config ready: seed={mc.seed}, nPaths={mc.n_paths}, dt={mc.dt}")
        return config
