"""Length-2 multi-component floats: an unevaluated sum ``hi + lo`` of two
values of one format, with ``|hi| >= |lo|`` and no overlapping bits.

``hi`` and ``lo`` may be scalars or equally shaped arrays; every operation
is elementwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .eft import fast2sum, two_prod_fma, two_sum
from .formats import FloatFormat, lp_add, lp_fma, lp_mul, round_to

__all__ = [
    "Expansion",
    "expand",
    "eval_wide",
    "grow",
    "safe_grow",
    "scaling",
    "mul",
    "is_nonoverlapping",
]


@dataclass(frozen=True)
class Expansion:
    fmt: FloatFormat
    hi: object
    lo: object

    @classmethod
    def zeros(cls, fmt: FloatFormat, n: int) -> "Expansion":
        return cls(fmt, np.zeros(n), np.zeros(n))

    @classmethod
    def exact(cls, fmt: FloatFormat, x) -> "Expansion":
        """Wrap canonical value(s) with a zero second component."""
        x = np.asarray(x, dtype=np.float64)
        z = np.zeros_like(x)
        if x.ndim == 0:
            return cls(fmt, float(x), 0.0)
        return cls(fmt, x, z)

    def __iter__(self):
        yield self.hi
        yield self.lo


def expand(fmt: FloatFormat, x) -> Expansion:
    """Represent a wide value as ``(RN(x), RN(x - RN(x)))``."""
    hi = round_to(fmt, x)
    lo = round_to(fmt, np.asarray(x, dtype=np.float64) - hi)
    return Expansion(fmt, hi, lo)


def eval_wide(x: Expansion):
    """Exact binary64 value of ``hi + lo`` (exact for formats up to 26 bits)."""
    return np.asarray(x.hi, dtype=np.float64) + x.lo if np.ndim(x.hi) else float(x.hi) + float(x.lo)


def is_nonoverlapping(x: Expansion):
    """The non-overlap invariant, tested as a Fast2Sum fixed point."""
    u, v = fast2sum(x.fmt, x.hi, x.lo)
    ok = (np.asarray(u) == x.hi) & (np.asarray(v) == x.lo)
    ok &= np.abs(np.asarray(x.hi)) >= np.abs(np.asarray(x.lo))
    return bool(ok) if np.ndim(ok) == 0 else ok


def grow(x: Expansion, a, strict: bool = False) -> Expansion:
    """Add a float to an expansion with two chained Fast2Sums.

    The first Fast2Sum assumes ``|x.hi| >= |a|``; ``strict`` enforces it.
    The inner ``lo + v`` is a single rounded addition.
    """
    fmt = x.fmt
    u, v = fast2sum(fmt, x.hi, a, strict=strict)
    u, v = fast2sum(fmt, u, lp_add(fmt, x.lo, v))
    return Expansion(fmt, u, v)


def safe_grow(x: Expansion, a) -> Expansion:
    """:func:`grow` with TwoSum in the first stage: no ordering precondition."""
    fmt = x.fmt
    u, v = two_sum(fmt, x.hi, a)
    u, v = fast2sum(fmt, u, lp_add(fmt, x.lo, v))
    return Expansion(fmt, u, v)


def scaling(x: Expansion, v) -> Expansion:
    """Multiply an expansion by a float: TwoProdFMA, fused fold of ``lo*v``, renormalise."""
    fmt = x.fmt
    p, e = two_prod_fma(fmt, x.hi, v)
    e = lp_fma(fmt, x.lo, v, e)
    p, e = fast2sum(fmt, p, e)
    return Expansion(fmt, p, e)


def mul(a: Expansion, b: Expansion) -> Expansion:
    """Product of two expansions; the ``lo*lo`` term is dropped."""
    if a.fmt != b.fmt:
        raise ValueError("expansions must share a format")
    fmt = a.fmt
    x, e = two_prod_fma(fmt, a.hi, b.hi)
    cross = lp_add(fmt, lp_mul(fmt, a.hi, b.lo), lp_mul(fmt, a.lo, b.hi))
    e = lp_add(fmt, e, cross)
    x, e = fast2sum(fmt, x, e)
    return Expansion(fmt, x, e)
