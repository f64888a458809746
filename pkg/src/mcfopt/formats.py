"""Software emulation of small binary floating-point formats.

Values are stored as float64 numbers that are exactly representable in the
target format ("canonical" values). Every arithmetic helper computes in
binary64 and rounds once to the target with round-to-nearest, ties-to-even.
For +, -, *, / and sqrt the binary64 intermediate has at least 2p+2 bits for
every supported format, so the double rounding is innocuous. FMA and the
mixed wide-scalar helpers carry the exact binary64 error term into the final
rounding instead (see :func:`round_pair`).

All functions accept Python floats or numpy arrays and return the same kind.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "FloatFormat",
    "FP32",
    "FP16",
    "BF16",
    "FP8_E4M3",
    "FP8_E5M2",
    "FORMATS",
    "get_format",
    "round_to",
    "round_pair",
    "ulp",
    "lp_add",
    "lp_sub",
    "lp_mul",
    "lp_div",
    "lp_sqrt",
    "lp_fma",
    "lp_scale",
    "lp_offset",
    "is_lost",
    "to_bits",
    "from_bits",
    "enumerate_finite",
    "stochastic_round",
    "LpTensor",
]


@dataclass(frozen=True)
class FloatFormat:
    """Descriptor of a binary floating-point format.

    ``e_min`` is the minimum normal exponent (1 - bias). Formats with
    ``has_inf=False`` follow the single-NaN "fn" convention used by FP8-E4M3:
    the all-ones exponent still encodes normal numbers, only the all-ones
    pattern is NaN, and overflow produces NaN unless saturation is requested.
    """

    name: str
    exp_bits: int
    mant_bits: int
    e_min: int
    supports_subnormals: bool = True
    has_inf: bool = True

    @property
    def precision(self) -> int:
        return self.mant_bits + 1

    @property
    def bias(self) -> int:
        return 1 - self.e_min

    @property
    def width(self) -> int:
        return 1 + self.exp_bits + self.mant_bits

    @property
    def nbytes(self) -> int:
        return (self.width + 7) // 8

    @property
    def e_max(self) -> int:
        top = (1 << self.exp_bits) - 1
        # IEEE formats reserve the all-ones exponent for Inf/NaN.
        return (top - 1 if self.has_inf else top) - self.bias

    @property
    def max_finite(self) -> float:
        m = self.mant_bits
        top_mant = (1 << m) - 1 if self.has_inf else (1 << m) - 2
        return math.ldexp((1 << m) + top_mant, self.e_max - m)

    @property
    def min_normal(self) -> float:
        return math.ldexp(1.0, self.e_min)

    @property
    def min_subnormal(self) -> float:
        return math.ldexp(1.0, self.e_min - self.mant_bits)

    def __str__(self) -> str:
        return self.name


FP32 = FloatFormat("fp32", 8, 23, -126)
FP16 = FloatFormat("fp16", 5, 10, -14)
BF16 = FloatFormat("bf16", 8, 7, -126)
FP8_E4M3 = FloatFormat("fp8e4m3", 4, 3, -6, has_inf=False)
FP8_E5M2 = FloatFormat("fp8e5m2", 5, 2, -14)

FORMATS = {f.name: f for f in (FP32, FP16, BF16, FP8_E4M3, FP8_E5M2)}

_ALIASES = {
    "float32": "fp32",
    "binary32": "fp32",
    "float16": "fp16",
    "half": "fp16",
    "bfloat16": "bf16",
    "e4m3": "fp8e4m3",
    "e5m2": "fp8e5m2",
}


def get_format(name: str | FloatFormat) -> FloatFormat:
    """Look up a built-in format by (case-insensitive) name."""
    if isinstance(name, FloatFormat):
        return name
    key = name.strip().lower().replace("-", "").replace("_", "")
    key = _ALIASES.get(key, key)
    try:
        return FORMATS[key]
    except KeyError:
        raise ValueError(
            f"unknown float format {name!r}; expected one of {sorted(FORMATS)}"
        ) from None


def _ret(arr: np.ndarray):
    return float(arr) if arr.ndim == 0 else arr


def _quantum_exp(fmt: FloatFormat, x: np.ndarray) -> np.ndarray:
    # exponent of the spacing of representable values around |x|
    _, e = np.frexp(x)
    e = np.where(x == 0, fmt.e_min, e - 1)
    return np.maximum(e, fmt.e_min) - fmt.mant_bits


def _finish(fmt: FloatFormat, r: np.ndarray, saturate: bool) -> np.ndarray:
    big = np.abs(r) > fmt.max_finite
    if big.any():
        if saturate:
            fill = np.copysign(fmt.max_finite, r)
            r = np.where(big & ~np.isnan(r), fill, r)
        elif fmt.has_inf:
            r = np.where(big, np.copysign(np.inf, r), r)
        else:
            r = np.where(big, np.nan, r)
    if not fmt.supports_subnormals:
        tiny = np.abs(r) < fmt.min_normal
        r = np.where(tiny, np.copysign(0.0, r), r)
    return r


def round_to(fmt: FloatFormat, x, saturate: bool = False):
    """Round wide value(s) to the nearest representable value of ``fmt`` (RNE).

    Overflow gives +-Inf (NaN for formats without Inf; +-max when
    ``saturate``), underflow gives +-0 and NaN propagates.
    """
    x = np.asarray(x, dtype=np.float64)
    q = _quantum_exp(fmt, x)
    with np.errstate(over="ignore"):
        r = np.ldexp(np.rint(np.ldexp(x, -q)), q)
    return _ret(_finish(fmt, r, saturate))


def round_pair(fmt: FloatFormat, hi, lo, saturate: bool = False):
    """Correctly round the exact sum ``hi + lo`` where ``hi = RN64(hi + lo)``.

    The binary64 rounding can only make ``hi`` land exactly on a midpoint of
    ``fmt`` (midpoints are binary64 numbers), so the sign of ``lo`` breaks
    that tie and every other case rounds like ``hi`` alone.
    """
    hi = np.asarray(hi, dtype=np.float64)
    lo = np.asarray(lo, dtype=np.float64)
    lo = np.where(np.isfinite(lo), lo, 0.0)
    q = _quantum_exp(fmt, hi)
    s = np.ldexp(hi, -q)
    fl = np.floor(s)
    with np.errstate(invalid="ignore"):
        tie = ((s - fl) == 0.5) & (lo != 0)
    r = np.where(tie, np.where(lo > 0, fl + 1.0, fl), np.rint(s))
    r = np.ldexp(r, q)
    r = np.where(r == 0, np.copysign(0.0, hi), r)
    return _ret(_finish(fmt, r, saturate))


def _two_sum64(a, b):
    s = a + b
    bb = s - a
    err = (a - (s - bb)) + (b - bb)
    return s, err


_SPLITTER = 134217729.0  # 2**27 + 1


def _two_prod64(a, b):
    p = a * b
    t = _SPLITTER * a
    ahi = t - (t - a)
    alo = a - ahi
    t = _SPLITTER * b
    bhi = t - (t - b)
    blo = b - bhi
    err = ((ahi * bhi - p) + ahi * blo + alo * bhi) + alo * blo
    return p, err


def ulp(fmt: FloatFormat, x):
    """Spacing of ``fmt`` values at ``x``: 2**(max(e, e_min) - mant_bits)."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("ulp is undefined for Inf/NaN")
    return _ret(np.ldexp(1.0, _quantum_exp(fmt, x)))


def lp_add(fmt: FloatFormat, a, b):
    a = np.asarray(a, dtype=np.float64)
    return round_to(fmt, a + b)


def lp_sub(fmt: FloatFormat, a, b):
    a = np.asarray(a, dtype=np.float64)
    return round_to(fmt, a - b)


def lp_mul(fmt: FloatFormat, a, b):
    a = np.asarray(a, dtype=np.float64)
    return round_to(fmt, a * b)


def lp_div(fmt: FloatFormat, a, b):
    a = np.asarray(a, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        return round_to(fmt, a / b)


def lp_sqrt(fmt: FloatFormat, a):
    a = np.asarray(a, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        return round_to(fmt, np.sqrt(a))


def lp_fma(fmt: FloatFormat, a, b, c):
    """``RN(a*b + c)`` with a single rounding."""
    if 2 * fmt.precision > 53:
        raise ValueError(f"{fmt} products are not exact in binary64")
    a = np.asarray(a, dtype=np.float64)
    p = a * b  # exact: at most 2p <= 53 significant bits
    with np.errstate(invalid="ignore"):
        s, e = _two_sum64(p, np.asarray(c, dtype=np.float64))
    return round_pair(fmt, s, e)


def lp_scale(fmt: FloatFormat, x, s: float):
    """Multiply canonical value(s) by a wide scalar with one rounding."""
    with np.errstate(invalid="ignore", over="ignore"):
        p, e = _two_prod64(np.asarray(x, dtype=np.float64), float(s))
    return round_pair(fmt, p, e)


def lp_offset(fmt: FloatFormat, x, s):
    """Add a wide scalar (or wide array) to canonical value(s) with one rounding."""
    with np.errstate(invalid="ignore"):
        t, e = _two_sum64(np.asarray(x, dtype=np.float64), np.asarray(s, dtype=np.float64))
    return round_pair(fmt, t, e)


_OPS: dict[str, Callable] = {"add": lp_add, "sub": lp_sub, "mul": lp_mul}


def is_lost(fmt: FloatFormat, a, b, op: str = "add"):
    """True where the operation result is within half an ulp of an operand."""
    try:
        fn = _OPS[op]
    except KeyError:
        raise ValueError(f"op must be one of {sorted(_OPS)}, got {op!r}") from None
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    r = np.asarray(fn(fmt, a, b))
    lost = (np.abs(r - a) <= np.asarray(ulp(fmt, a)) / 2) | (
        np.abs(r - b) <= np.asarray(ulp(fmt, b)) / 2
    )
    return bool(lost) if lost.ndim == 0 else lost


def _nan_bits(fmt: FloatFormat) -> int:
    m = fmt.mant_bits
    expo = (1 << fmt.exp_bits) - 1
    mant = (1 << m) - 1 if not fmt.has_inf else 1 << (m - 1)
    return (expo << m) | mant


def to_bits(fmt: FloatFormat, x):
    """Encode canonical value(s) into the sign/exponent/mantissa bit layout."""
    x = np.asarray(x, dtype=np.float64)
    finite = np.isfinite(x)
    with np.errstate(invalid="ignore"):
        if not np.array_equal(np.asarray(round_to(fmt, x))[finite], x[finite]):
            raise ValueError(f"value(s) not representable in {fmt}")
    if not fmt.has_inf and np.isinf(x).any():
        raise ValueError(f"{fmt} has no infinity encoding")
    m, eb = fmt.mant_bits, fmt.exp_bits
    a = np.where(finite, np.abs(x), 0.0)
    _, e = np.frexp(a)
    e = e - 1
    normal = (a != 0) & (e >= fmt.e_min)
    expfield = np.where(normal, e + fmt.bias, 0)
    mant = np.where(
        normal,
        np.ldexp(a, m - e) - (1 << m),
        np.ldexp(a, m - fmt.e_min),
    ).astype(np.int64)
    bits = (expfield.astype(np.int64) << m) | mant
    bits = np.where(np.isinf(x), ((1 << eb) - 1) << m, bits)
    bits = np.where(np.signbit(x), bits | (1 << (eb + m)), bits)
    bits = np.where(np.isnan(x), _nan_bits(fmt), bits)
    return int(bits) if bits.ndim == 0 else bits


def from_bits(fmt: FloatFormat, bits):
    """Decode bit pattern(s) into wide values."""
    bits = np.asarray(bits, dtype=np.int64)
    if np.any((bits < 0) | (bits >= (1 << fmt.width))):
        raise ValueError(f"bit pattern does not fit in {fmt.width} bits")
    m, eb = fmt.mant_bits, fmt.exp_bits
    sign = (bits >> (eb + m)) & 1
    ef = (bits >> m) & ((1 << eb) - 1)
    mf = bits & ((1 << m) - 1)
    val = np.where(
        ef == 0,
        np.ldexp(mf.astype(np.float64), fmt.e_min - m),
        np.ldexp((mf + (1 << m)).astype(np.float64), ef - fmt.bias - m),
    )
    top = ef == (1 << eb) - 1
    if fmt.has_inf:
        val = np.where(top, np.where(mf == 0, np.inf, np.nan), val)
    else:
        val = np.where(top & (mf == (1 << m) - 1), np.nan, val)
    val = np.where(sign == 1, -val, val)
    return _ret(val)


def enumerate_finite(fmt: FloatFormat) -> np.ndarray:
    """Every finite value of a <=16-bit format, ascending (-0 before +0)."""
    if fmt.width > 16:
        raise ValueError(f"{fmt} is too wide to enumerate")
    vals = np.asarray(from_bits(fmt, np.arange(1 << fmt.width)))
    vals = vals[np.isfinite(vals)]
    order = np.lexsort((~np.signbit(vals), vals))
    return vals[order]


def stochastic_round(fmt: FloatFormat, x, rng):
    """Round down to ``a_l`` with probability ``(a_u - x)/(a_u - a_l)``, else up.

    ``rng`` must provide ``random(size)`` returning uniforms in [0, 1).
    Values outside the finite range are rejected rather than saturated.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)) or np.any(np.abs(x) > fmt.max_finite):
        raise ValueError(f"stochastic rounding input outside the {fmt} range")
    q = _quantum_exp(fmt, x)
    s = np.ldexp(x, -q)
    fl = np.floor(s)
    frac = s - fl  # exact
    u = np.asarray(rng.random(x.size), dtype=np.float64).reshape(x.shape)
    r = np.ldexp(np.where(u < frac, fl + 1.0, fl), q)
    r = np.where(r == 0, np.copysign(0.0, x), r)
    return _ret(r)


@dataclass
class LpTensor:
    """Flat vector of canonical values of one format."""

    fmt: FloatFormat
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64).reshape(-1)

    @classmethod
    def zeros(cls, fmt: FloatFormat, n: int) -> "LpTensor":
        return cls(fmt, np.zeros(n))

    @classmethod
    def from_wide(cls, fmt: FloatFormat, x) -> "LpTensor":
        return cls(fmt, np.atleast_1d(round_to(fmt, x)))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __len__(self) -> int:
        return self.data.size

    def is_canonical(self) -> bool:
        r = np.asarray(round_to(self.fmt, self.data))
        same = (r == self.data) | (np.isnan(r) & np.isnan(self.data))
        return bool(same.all())

    def copy(self) -> "LpTensor":
        return LpTensor(self.fmt, self.data.copy())
