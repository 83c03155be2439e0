"""JSON serialization helpers.

The standard JSON encoder writes NaN/Inf as bare tokens, which are not valid
JSON, and rejects NumPy scalars and arrays outright. clean_json_values walks
a nested structure, turns NumPy values into plain Python ones and replaces
non-finite floats with None so config sidecars and binary headers stay
portable. Applied once at the boundary.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Any

import numpy as np


def clean_json_values(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): clean_json_values(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean_json_values(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean_json_values(obj.tolist())
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, float):
        if math.isnan(obj) or math.isinf(obj):
            return None
    return obj
