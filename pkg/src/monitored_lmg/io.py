"""CSV and JSON artifact writers.

Every CSV starts with ``#``-prefixed provenance lines, then one header
line of column names.  Floats are printed with 17 significant digits so
two runs with the same seed produce byte-identical files.
"""

from __future__ import annotations

import json
import platform
import sys
from pathlib import Path

import numpy as np


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return f"{float(v):.17g}"


def write_csv(path: str | Path, columns: dict[str, np.ndarray], meta: dict | None = None) -> Path:
    """Write equal-length columns; ``meta`` becomes ``# key=value`` lines."""
    path = Path(path)
    names = list(columns)
    arrays = [np.asarray(columns[n]) for n in names]
    n = {len(a) for a in arrays}
    if len(n) > 1:
        raise ValueError(f"columns have different lengths: {sorted(n)}")
    lines = [f"# {k}={format_value(v)}" for k, v in (meta or {}).items()]
    lines.append(",".join(names))
    for row in zip(*arrays):
        lines.append(",".join(format_value(v) for v in row))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_csv(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    """Inverse of :func:`write_csv`; returns (columns, meta)."""
    meta: dict[str, str] = {}
    header = None
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key] = value
        elif header is None:
            header = [c.strip() for c in line.split(",")]
        elif line:
            rows.append([float(x) for x in line.split(",")])
    data = np.array(rows, dtype=float).reshape(-1, len(header or []))
    return {name: data[:, i] for i, name in enumerate(header or [])}, meta


def versions() -> dict[str, str]:
    import matplotlib
    import numba
    import scipy

    from . import __version__

    return {
        "package": __version__,
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
        "matplotlib": matplotlib.__version__,
        "platform": platform.platform(),
    }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else None
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_manifest(path: str | Path, manifest: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())
