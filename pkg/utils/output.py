#!/usr/bin/env python3
"""
CSV and JSON writers that start every output with a provenance header
"""
import csv
import json
import logging
import sys
from contextlib import contextmanager
from enum import Enum
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from core import TOOL_NAME, __version__

logger = logging.getLogger(__name__)


def build_header(command: str, config: Dict[str, Any]) -> Dict[str, Any]:
    return {"tool": TOOL_NAME, "version": __version__, "command": command, "config": config}


def _default(obj):
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Enum):
        return obj.value
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def to_json(data: Any, indent: Optional[int] = 2) -> str:
    return json.dumps(data, indent=indent, default=_default)


@contextmanager
def _open(out_path: Optional[str]):
    if out_path is None:
        yield sys.stdout
        return
    with open(out_path, 'w', newline='') as f:
        yield f
    logger.info(f"Wrote {out_path}")


def write_json(result: Dict[str, Any], header: Dict[str, Any], out_path: Optional[str] = None):
    """{"header": ..., **result} with the header as the first key"""
    with _open(out_path) as f:
        f.write(to_json({"header": header, **result}))
        f.write("\n")


def write_csv(columns: Sequence[str], rows: Iterable[Sequence[Any]], header: Dict[str, Any],
              out_path: Optional[str] = None):
    """'# '-prefixed JSON header lines, then the column row, then data"""
    with _open(out_path) as f:
        for line in to_json(header).splitlines():
            f.write(f"# {line}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_default(v) if isinstance(v, (np.generic, np.ndarray)) else v for v in row])


def read_csv(path: str) -> Dict[str, Any]:
    """Parse a file written by write_csv back into {header, columns, rows}"""
    header_lines: List[str] = []
    with open(path, 'r', newline='') as f:
        lines = f.read().splitlines()
    body_start = 0
    for i, line in enumerate(lines):
        if not line.startswith("# "):
            body_start = i
            break
        header_lines.append(line[2:])
    reader = csv.reader(lines[body_start:])
    columns = next(reader)
    rows = [[float(v) for v in row] for row in reader]
    return {"header": json.loads("\n".join(header_lines)), "columns": columns, "rows": rows}
