import math
from typing import Any

import numpy as np


def safe_int(value, default: int = 0) -> int:
    """Safely convert a value to int, falling back to default on errors."""
    try:
        return int(value)
    except (TypeError, ValueError):
        return default


def safe_float(value, default: float = float("nan")) -> float:
    """Convert to float; unparseable cells (empty CSV fields, 'null') become default."""
    try:
        return float(value)
    except (TypeError, ValueError):
        return default


def sanitize_for_json(obj: Any) -> Any:
    """
    Recursively sanitize a report structure for json.dump.
    NaN/Infinity become null (undefined AUC stays distinguishable from 0.0);
    numpy arrays and scalars become plain Python values.
    """
    if isinstance(obj, dict):
        return {str(key): sanitize_for_json(value) for key, value in obj.items()}
    elif isinstance(obj, np.ndarray):
        return sanitize_for_json(obj.tolist())
    elif isinstance(obj, (list, tuple)):
        return [sanitize_for_json(item) for item in obj]
    elif isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    elif isinstance(obj, (int, np.integer)):
        return int(obj)
    elif isinstance(obj, (float, np.floating)):
        value = float(obj)
        if math.isnan(value) or math.isinf(value):
            return None
        return value
    elif isinstance(obj, str) or obj is None:
        return obj
    else:
        return str(obj)


def restore_nan(value: Any) -> float:
    """Inverse of the null mapping above for numeric report fields."""
    return float("nan") if value is None else float(value)
