# utils/numeric.py
from __future__ import annotations


def safe_div(a: float, b: float) -> float:
    if b == 0:
        return 0.0
    return a / b


def round_half_up_ratio(num: int, den: int) -> int:
    """Integer nearest to num/den, halves rounded up (num, den >= 0)."""
    return (2 * num + den) // (2 * den)
