"""Output files: RFC-4180 CSV, canonical JSON and the run manifest."""
from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy

from . import __version__


def _clean(v):
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def canonical_json(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def write_json(path: Path, obj) -> Path:
    path.write_text(canonical_json(obj))
    return path


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return v


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])
    return path


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(outdir: Path, config: dict, files: Sequence[Path]) -> Path:
    """manifest.json listing every output with its sha256.

    Thread count is left out of the hashed config on purpose: it must not
    change any output.
    """
    cfg = {k: v for k, v in config.items() if k != "threads"}
    manifest = {
        "config": cfg,
        "config_hash": hashlib.sha256(canonical_json(cfg).encode()).hexdigest(),
        "seed": cfg.get("seed"),
        "versions": {"brwre_lab": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "files": {p.name: sha256_file(p) for p in sorted(files, key=lambda p: p.name)},
    }
    return write_json(outdir / "manifest.json", manifest)
