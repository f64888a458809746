"""Error-free transformations in an emulated format.

Each function returns a pair ``(x, y)`` with ``x`` the rounded result and
``y`` its rounding error, so that ``x + y`` equals the exact sum or product
whenever the format's range permits. Every step is a single rounded
operation of ``fmt``.
"""

from __future__ import annotations

import numpy as np

from .formats import FloatFormat, lp_add, lp_fma, lp_mul, lp_sub

__all__ = ["fast2sum", "two_sum", "split", "two_prod", "two_prod_fma", "split_shift",
           "product_is_exactly_splittable"]


def fast2sum(fmt: FloatFormat, a, b, strict: bool = False):
    """Dekker's Fast2Sum; requires ``|a| >= |b|`` for exactness.

    With ``strict`` the ordering precondition is checked and a violation
    raises ``ValueError``; otherwise the sequence runs unconditionally.
    """
    if strict and np.any(np.abs(np.asarray(a)) < np.abs(np.asarray(b))):
        raise ValueError("fast2sum requires |a| >= |b|")
    x = lp_add(fmt, a, b)
    y = lp_sub(fmt, b, lp_sub(fmt, x, a))
    return x, y


def two_sum(fmt: FloatFormat, a, b):
    """Knuth's branch-free TwoSum: no ordering precondition."""
    x = lp_add(fmt, a, b)
    b_virtual = lp_sub(fmt, x, a)
    a_virtual = lp_sub(fmt, x, b_virtual)
    b_roundoff = lp_sub(fmt, b, b_virtual)
    a_roundoff = lp_sub(fmt, a, a_virtual)
    y = lp_add(fmt, a_roundoff, b_roundoff)
    return x, y


def split_shift(fmt: FloatFormat) -> int:
    # ceil(p/2) with p the significand precision; floor(p/2) loses exactness
    # for odd p (fp16, e5m2) because the high halves' product needs p+1 bits.
    return (fmt.precision + 1) // 2


def split(fmt: FloatFormat, a, strict: bool = True):
    """Veltkamp split of ``a`` into two halves with ``a_hi + a_lo == a``.

    Raises ``OverflowError`` (in strict mode) when scaling by ``2**c + 1``
    overflows the format.
    """
    c = split_shift(fmt)
    t = lp_mul(fmt, float(2**c + 1), a)
    if strict and not np.all(np.isfinite(t)):
        raise OverflowError(f"split scaling overflows {fmt}")
    a_hi = lp_sub(fmt, t, lp_sub(fmt, t, a))
    a_lo = lp_sub(fmt, a, a_hi)
    return a_hi, a_lo


def two_prod(fmt: FloatFormat, a, b, strict: bool = True):
    """Dekker's TwoProd built on :func:`split` (no FMA needed)."""
    x = lp_mul(fmt, a, b)
    a_hi, a_lo = split(fmt, a, strict)
    b_hi, b_lo = split(fmt, b, strict)
    if strict and not np.all(np.isfinite(x)):
        raise OverflowError(f"product overflows {fmt}")
    err1 = lp_sub(fmt, x, lp_mul(fmt, a_hi, b_hi))
    err2 = lp_sub(fmt, err1, lp_mul(fmt, a_lo, b_hi))
    err3 = lp_sub(fmt, err2, lp_mul(fmt, a_hi, b_lo))
    e = lp_sub(fmt, lp_mul(fmt, a_lo, b_lo), err3)
    return x, e


def two_prod_fma(fmt: FloatFormat, a, b):
    x = lp_mul(fmt, a, b)
    e = lp_fma(fmt, a, b, np.negative(x))
    return x, e


def product_is_exactly_splittable(fmt: FloatFormat, a, b):
    """Whether ``a*b - RN(a*b)`` is guaranteed representable.

    Standard hypothesis: ``e_a + e_b >= e_min + p - 1`` (no underflow of the
    error term) and a finite rounded product. Zero factors always qualify.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _, ea = np.frexp(a)
    _, eb = np.frexp(b)
    zero = (a == 0) | (b == 0)
    with np.errstate(over="ignore"):
        finite = np.isfinite(np.asarray(lp_mul(fmt, a, b)))
    ok = zero | ((ea - 1) + (eb - 1) >= fmt.e_min + fmt.precision - 1)
    return ok & finite

