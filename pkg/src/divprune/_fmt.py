"""Fixed-precision number formatting shared by the report writers."""
from __future__ import annotations

import math


def fmt(x, digits: int = 6) -> str:
    """Format with a fixed number of decimals; never emits ``-0.000000``."""
    if x is None:
        return ""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    s = f"{x:.{digits}f}"
    if s.startswith("-") and float(s) == 0.0:
        s = s[1:]
    return s


def rounded(obj, digits: int = 6):
    """Recursively replace floats by fixed-precision floats for JSON output."""
    if isinstance(obj, float):
        if math.isnan(obj) or math.isinf(obj):
            return None
        v = round(obj, digits)
        return 0.0 if v == 0 else v
    if isinstance(obj, dict):
        return {k: rounded(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [rounded(v, digits) for v in obj]
    return obj
