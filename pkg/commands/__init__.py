"""
CLI command groups; each module registers its subparsers and handlers
"""
import argparse
import logging
from typing import Any, Dict, Iterable, Optional, Tuple

from core.config_manager import RunConfig
from core.model import DerivedConstants, ValidatedParams, derive, validate
from utils.error_logger import ErrorLogger
from utils.output import build_header, write_json

logger = logging.getLogger(__name__)
error_logger = ErrorLogger("CLI")

# (flag, option key, type, default, help)
OptionSpec = Tuple[str, str, Any, Any, str]


def add_options(parser: argparse.ArgumentParser, specs: Iterable[OptionSpec]):
    """Command-specific flags; their values land in RunConfig.options under the key"""
    keys = []
    for flag, key, kind, default, help_text in specs:
        if kind is bool:
            parser.add_argument(flag, dest=key, action="store_const", const=True, default=None, help=help_text)
        else:
            parser.add_argument(flag, dest=key, type=kind, default=None,
                                help=f"{help_text} (default: {default})")
        keys.append(key)
    parser.set_defaults(option_keys=tuple(keys), option_defaults={s[1]: s[3] for s in specs})


def option(config: RunConfig, key: str, default: Any = None) -> Any:
    return config.options.get(key, default)


def validated(config: RunConfig) -> ValidatedParams:
    return validate(config.params)


def derived_constants(config: RunConfig) -> DerivedConstants:
    return derive(validate(config.params))


def emit_json(command: str, config: RunConfig, result: Dict[str, Any], out_path: Optional[str] = None):
    header = build_header(command, config.to_dict())
    write_json(result, header, out_path if out_path is not None else config.out_path)
