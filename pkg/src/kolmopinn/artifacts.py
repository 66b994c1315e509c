"""Output files: CSV tables and JSON reports with 17 significant digits, written atomically."""

from __future__ import annotations

import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .network import atomic_write_text


def fmt(value) -> str:
    """Decimal text for one cell; floats keep 17 significant digits."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    return str(value)


def _json(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return json.dumps(fmt(v)) if not math.isfinite(v) else fmt(v)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_json(v, indent, level + 1)}" for k, v in sorted(obj.items())]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[" + ", ".join(_json(v, indent, level + 1) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    """JSON text with sorted keys and 17-significant-digit floats (non-finite floats as strings)."""
    return _json(obj, indent, 0) + "\n"


def write_json(path, obj) -> Path:
    return atomic_write_text(path, dumps(obj))


def write_csv(path, header, rows, comments: dict | None = None) -> Path:
    """Comma-separated table; ``comments`` become leading ``# key: json`` lines."""
    lines = [f"# {k}: {json.dumps(v, sort_keys=True, default=str)}" for k, v in (comments or {}).items()]
    lines.append(",".join(header))
    lines.extend(",".join(fmt(c) for c in row) for row in rows)
    return atomic_write_text(path, "\n".join(lines) + "\n")


def read_csv(path) -> tuple[list[str], np.ndarray]:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    header = lines[0].split(",")
    data = np.array([[float(c) for c in ln.split(",")] for ln in lines[1:]]) if len(lines) > 1 else np.empty((0, len(header)))
    return header, data


def save_figure(fig, path) -> Path:
    """Render a matplotlib figure to a temp file, then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.stem}.", suffix=path.suffix)
    os.close(fd)
    try:
        fig.savefig(tmp, dpi=120)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path
