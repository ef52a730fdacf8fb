"""File formats: grid CSV, certificate sidecars, JSON with fixed precision,
and atomic writes."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .core import SENTINEL, BoxDomain, SampledSlice, XiGrid, is_sentinel

DIGITS = 17


def fmt(x: float) -> str:
    """17 significant digits; the sentinel (and +inf) is written ``inf``."""
    x = float(x)
    if x >= SENTINEL or x == math.inf:
        return "inf"
    if x == -math.inf:
        return "-inf"
    if math.isnan(x):
        return "nan"
    return f"{x:.{DIGITS}g}"


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _json_float(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if x >= SENTINEL:
        return "Infinity"
    if x == -math.inf:
        return "-Infinity"
    return f"{x:.{DIGITS}g}"


def dumps(obj, indent: int | None = 2) -> str:
    """JSON text with sorted keys and 17-digit numbers (``Infinity`` for +inf)."""
    enc = json.JSONEncoder(indent=indent, sort_keys=True)
    it = json.encoder._make_iterencode(
        {}, enc.default, json.encoder.encode_basestring_ascii, " " * indent if indent else None,
        _json_float, enc.key_separator, enc.item_separator, True, False, True,
    )
    return "".join(it(_clean(obj), 0)) + "\n"


def loads(text: str):
    return json.loads(text)


def atomic_write(path, text: str) -> Path:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_json(path, obj) -> Path:
    return atomic_write(path, dumps(obj))


def read_json(path):
    return loads(Path(path).read_text())


# ---------------------------------------------------------------------------
# grid CSV
# ---------------------------------------------------------------------------

def grid_csv(grid: XiGrid, values) -> str:
    values = np.asarray(values, dtype=float).ravel()
    head = (f"# xi_grid N={grid.dim} counts={','.join(str(c) for c in grid.counts)} "
            f"lo={','.join(fmt(v) for v in grid.box.lo)} hi={','.join(fmt(v) for v in grid.box.hi)}\n")
    buf = io.StringIO()
    buf.write(head)
    for i, v in enumerate(values):
        mi = ";".join(str(k) for k in grid.multi_index(i))
        buf.write(f"{mi},{fmt(v)}\n")
    return buf.getvalue()


def parse_grid_csv(text: str) -> tuple[XiGrid, np.ndarray]:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# xi_grid"):
        raise ValueError("grid file must start with a '# xi_grid' header")
    fields = dict(tok.split("=", 1) for tok in lines[0].split()[2:])
    try:
        n = int(fields["N"])
        counts = [int(c) for c in fields["counts"].split(",")]
        lo = [float(v) for v in fields["lo"].split(",")]
        hi = [float(v) for v in fields["hi"].split(",")]
    except KeyError as exc:
        raise ValueError(f"grid header is missing {exc}") from exc
    if not (len(counts) == len(lo) == len(hi) == n):
        raise ValueError("grid header fields disagree on the dimension")
    grid = XiGrid(BoxDomain(lo, hi), tuple(counts))
    values = np.full(grid.size, np.nan)
    for row in csv.reader(lines[1:]):
        if not row or row[0].startswith("#"):
            continue
        idx = tuple(int(k) for k in row[0].split(";"))
        tok = row[1].strip()
        values[grid.flat_index(idx)] = SENTINEL if tok == "inf" else float(tok)
    if np.any(np.isnan(values)):
        missing = grid.multi_index(int(np.flatnonzero(np.isnan(values))[0]))
        raise ValueError(f"grid file has no row for node {missing}")
    return grid, values


def write_slice(path, s: SampledSlice) -> Path:
    return atomic_write(path, grid_csv(s.grid, s.values))


def read_slice(path) -> SampledSlice:
    grid, values = parse_grid_csv(Path(path).read_text())
    return SampledSlice(grid, values)


def certificates_json(certificates) -> dict:
    return {str(i): c.to_json() for i, c in enumerate(certificates) if c is not None}


def sentinel_free(values) -> list:
    """Values as plain floats with the sentinel mapped to +inf."""
    v = np.asarray(values, dtype=float)
    return np.where(is_sentinel(v), math.inf, v).tolist()
