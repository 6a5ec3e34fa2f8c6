"""Checked-in defaults (parameter ranges, hyperparameters, thresholds)."""
from __future__ import annotations

import copy
import json
from functools import lru_cache
from pathlib import Path

DEFAULTS_PATH = Path(__file__).parent / "data" / "defaults.json"


@lru_cache(maxsize=1)
def _cached() -> dict:
    return json.loads(DEFAULTS_PATH.read_text())


def load_defaults() -> dict:
    """Fresh deep copy of the defaults, safe to mutate."""
    return copy.deepcopy(_cached())


def merge(base: dict, override: dict) -> dict:
    """Recursive dict merge; keys in ``override`` win."""
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = v
    return out
