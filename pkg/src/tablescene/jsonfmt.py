"""Byte-stable JSON: sorted keys, floats rounded to a fixed number of decimals."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

DECIMALS = 4


def _clean(obj, decimals):
    if isinstance(obj, dict):
        return {str(k): _clean(v, decimals) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v, decimals) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v, decimals) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            raise ValueError(f"non-finite float in JSON output: {x}")
        # + 0.0 folds -0.0 into 0.0
        return round(x, decimals) + 0.0
    return obj


def dumps(obj, decimals: int = DECIMALS) -> str:
    return json.dumps(_clean(obj, decimals), sort_keys=True, indent=2) + "\n"


def write(path, obj, decimals: int = DECIMALS) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj, decimals), encoding="utf-8")
    return path
