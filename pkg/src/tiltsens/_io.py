"""CSV output with a config header line and round-trippable numbers."""

from __future__ import annotations

import json
import math
from collections.abc import Iterable, Mapping, Sequence
from pathlib import Path
from typing import IO, Any

import numpy as np


def format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return format(value, ".17g")
    return str(value)


def config_line(config: Mapping[str, Any]) -> str:
    return "# config: " + json.dumps(config, sort_keys=True, default=str)


def write_table(
    out: IO[str],
    columns: Sequence[str],
    rows: Iterable[Sequence[Any]],
    config: Mapping[str, Any] | None = None,
) -> None:
    if config is not None:
        out.write(config_line(config) + "\n")
    out.write(",".join(columns) + "\n")
    for row in rows:
        out.write(",".join(format_value(v) for v in row) + "\n")


def write_table_file(path: str | Path, columns, rows, config=None) -> None:
    with Path(path).open("w", newline="") as fh:
        write_table(fh, columns, rows, config)
