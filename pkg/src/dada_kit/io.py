"""Tabular output, observation input and run manifests."""
from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    v = float(v)
    if math.isnan(v):
        return "nan"
    return "%.12g" % v


def write_csv(path, columns, rows, units=None) -> Path:
    """CSV with a ``# units:`` comment line, a header row, and ``%.12g`` numbers."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    units = units or {}
    with path.open("w", newline="\n") as f:
        f.write("# units: " + "; ".join(f"{c}={units.get(c, '1')}" for c in columns) + "\n")
        f.write(",".join(columns) + "\n")
        for row in rows:
            f.write(",".join(fmt(v) for v in row) + "\n")
    return path


def read_csv(path) -> tuple[list[str], list[list[str]], list[int]]:
    """Header, raw rows and their 1-based line numbers; ``#`` lines are skipped."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from None
    header, rows, linenos = None, [], []
    for i, line in enumerate(lines, start=1):
        if not line.strip() or line.startswith("#"):
            continue
        cells = [c.strip() for c in line.split(",")]
        if header is None:
            header = cells
            continue
        rows.append(cells)
        linenos.append(i)
    if header is None:
        raise ConfigError(f"{path}: no header row")
    return header, rows, linenos


def read_matrix_csv(path, prefix: str) -> np.ndarray:
    """Columns whose names start with ``prefix`` as a float array; bad rows are reported by line."""
    header, rows, linenos = read_csv(path)
    cols = [i for i, h in enumerate(header) if h.startswith(prefix)]
    if not cols:
        raise ConfigError(f"{path}: no columns starting with {prefix!r}")
    out = np.empty((len(rows), len(cols)))
    for r, (cells, ln) in enumerate(zip(rows, linenos)):
        if len(cells) != len(header):
            raise ConfigError(f"{path}: row {r} (line {ln}) has {len(cells)} fields, expected {len(header)}")
        try:
            out[r] = [float(cells[i]) for i in cols]
        except ValueError:
            raise ConfigError(f"{path}: row {r} (line {ln}) is not numeric") from None
        if not np.all(np.isfinite(out[r])):
            raise ConfigError(f"{path}: row {r} (line {ln}) has non-finite values")
    if out.shape[0] == 0:
        raise ConfigError(f"{path}: no data rows")
    return out


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def write_manifest(out_dir, command: str, config: dict, seed: int, files, timings: dict,
                   nondeterministic=(), failures=()) -> Path:
    """``manifest.json`` listing every output with its SHA-256.

    Files in ``nondeterministic`` (wall-clock timings) are listed but flagged,
    since their bytes legitimately change between runs.
    """
    out_dir = Path(out_dir)
    entries = []
    for f in files:
        f = Path(f)
        entries.append({"path": f.name, "sha256": sha256(f),
                        "deterministic": f.name not in set(nondeterministic)})
    manifest = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config": config,
        "outputs": entries,
        "timings_s": timings,
        "failures": list(failures),
    }
    return write_json(out_dir / "manifest.json", manifest)
