"""Exactness censuses and reproducibility checks behind ``mcfopt verify``.

The oracle decides ``sum(terms) == 0`` exactly: each term is folded into a
binary64 floating-point expansion with error-free additions (products of
two emulated values are split exactly first), and the total is zero iff
every component is zero. This is independent of the emulated operations
being checked. Formats up to 8 bits are censused exhaustively; wider ones
on a seeded sample.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import eft, expansion
from .formats import (
    BF16,
    FloatFormat,
    enumerate_finite,
    from_bits,
    get_format,
    lp_add,
    round_to,
    ulp,
    _two_prod64,
    _two_sum64,
)
from .optim import HyperParams, Strategy, init_state, memory_bytes_per_param
from .rng import SplitMix64, derive_seed

__all__ = [
    "CheckResult",
    "census_pairs",
    "exact_sum_is_zero",
    "check_two_sum",
    "check_two_prod_fma",
    "check_fast2sum",
    "check_expansions",
    "check_memory_table",
    "check_lost_arithmetic",
    "run_checks",
    "DEFAULT_SAMPLES",
    "EXPECTED_BYTES",
]

DEFAULT_SAMPLES = {"bf16": 10_000_000, "fp16": 2_000_000, "fp32": 2_000_000}
EXPECTED_BYTES = {"A": 8, "B": 10, "C": 12, "D": 16, "D-MW-off": 12}
_CHUNK = 1_000_000


@dataclass
class CheckResult:
    name: str
    fmt: str
    passed: bool
    checked: int
    failures: int = 0
    excluded: int = 0
    detail: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f", {self.excluded} outside domain" if self.excluded else ""
        tail = f" ({self.detail})" if self.detail else ""
        return (
            f"{status}  {self.name:<24} [{self.fmt}] {self.checked} checked, "
            f"{self.failures} failures{extra}, {self.seconds:.1f}s{tail}"
        )


def exact_sum_is_zero(*terms) -> np.ndarray:
    """Elementwise exact test of ``sum(terms) == 0`` for finite binary64 arrays."""
    comps: list[np.ndarray] = []
    for t in terms:
        q = np.asarray(t, dtype=np.float64)
        grown = []
        for c in comps:
            q, h = _two_sum64(q, c)
            grown.append(h)
        grown.append(q)
        comps = grown
    ok = np.ones(np.shape(comps[0]), dtype=bool)
    for c in comps:
        ok &= c == 0
    return ok


def _exact_product_terms(a, b):
    p, e = _two_prod64(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
    return p, e


def _random_finite(fmt: FloatFormat, rng: SplitMix64, n: int) -> np.ndarray:
    out = np.empty(n)
    filled = 0
    while filled < n:
        bits = rng.next_uint64(n - filled) & np.uint64((1 << fmt.width) - 1)
        vals = np.asarray(from_bits(fmt, bits.astype(np.int64)))
        vals = vals[np.isfinite(vals)]
        out[filled : filled + vals.size] = vals
        filled += vals.size
    return out


def _near(fmt: FloatFormat, a: np.ndarray, rng: SplitMix64) -> np.ndarray:
    """Random values whose exponent is within 12 binades of ``a``'s."""
    n = a.size
    r = rng.next_uint64(3 * n)
    sign = np.where((r[:n] & np.uint64(1)) == 1, -1.0, 1.0)
    shift = (r[n : 2 * n] % np.uint64(25)).astype(np.int64) - 12
    frac = (r[2 * n :] >> np.uint64(64 - fmt.mant_bits)).astype(np.float64) if fmt.mant_bits else 0.0
    _, ea = np.frexp(np.where(a == 0, 1.0, a))
    e = np.clip(ea - 1 + shift, fmt.e_min, fmt.e_max)
    sig = 1.0 + np.ldexp(frac, -fmt.mant_bits)
    return sign * np.asarray(round_to(fmt, np.ldexp(sig, e), saturate=True))


def census_pairs(fmt: FloatFormat, samples: int | None = None, seed: int = 0):
    """Yield ``(a, b)`` operand chunks: exhaustive for <= 8-bit formats."""
    if fmt.width <= 8:
        vals = enumerate_finite(fmt)
        a, b = np.meshgrid(vals, vals, indexing="ij")
        yield a.reshape(-1), b.reshape(-1)
        return
    n = samples if samples is not None else DEFAULT_SAMPLES.get(fmt.name, 1_000_000)
    rng = SplitMix64(derive_seed(seed, "census", fmt.name))
    done = 0
    while done < n:
        k = min(_CHUNK, n - done)
        half = k // 2
        a = _random_finite(fmt, rng, k)
        b = np.concatenate([_random_finite(fmt, rng, half), _near(fmt, a[half:], rng)])
        yield a, b
        done += k


def _census(name, fmt, samples, seed, body):
    t0 = time.perf_counter()
    res = CheckResult(name, fmt.name, True, 0)
    with np.errstate(all="ignore"):
        for a, b in census_pairs(fmt, samples, seed):
            checked, failed, excluded = body(a, b)
            res.checked += checked
            res.failures += failed
            res.excluded += excluded
    res.passed = res.failures == 0 and res.checked > 0
    res.seconds = time.perf_counter() - t0
    return res


def check_two_sum(fmt: FloatFormat, samples=None, seed=0) -> CheckResult:
    spurious = 0

    def body(a, b):
        nonlocal spurious
        x, y = eft.two_sum(fmt, a, b)
        dom = np.isfinite(x)
        y = y[dom]
        ok = np.isfinite(y)
        spurious += int((~ok).sum())
        ok[ok] = exact_sum_is_zero(a[dom][ok], b[dom][ok], -x[dom][ok], -y[ok])
        return int(dom.sum()), int((~ok).sum()), int((~dom).sum())

    res = _census("two_sum exactness", fmt, samples, seed, body)
    if spurious:
        res.detail = f"{spurious} with finite sum but overflowing intermediate"
    return res


def check_two_prod_fma(fmt: FloatFormat, samples=None, seed=0) -> CheckResult:
    def body(a, b):
        dom = np.asarray(eft.product_is_exactly_splittable(fmt, a, b))
        a, b = a[dom], b[dom]
        x, e = eft.two_prod_fma(fmt, a, b)
        p, pe = _exact_product_terms(a, b)
        ok = exact_sum_is_zero(p, pe, -x, -e)
        return int(dom.sum()), int((~ok).sum()), int((~dom).sum())

    return _census("two_prod_fma exactness", fmt, samples, seed, body)


def check_fast2sum(fmt: FloatFormat, samples=None, seed=0) -> CheckResult:
    """Exactness and the half-ulp residual bound, operands ordered by magnitude."""

    def body(a, b):
        swap = np.abs(a) < np.abs(b)
        a, b = np.where(swap, b, a), np.where(swap, a, b)
        x, y = eft.fast2sum(fmt, a, b)
        dom = np.isfinite(x)
        a, b, x, y = a[dom], b[dom], x[dom], y[dom]
        ok = exact_sum_is_zero(a, b, -x, -y)
        ok &= np.abs(y) <= np.asarray(ulp(fmt, x)) / 2
        return int(dom.sum()), int((~ok).sum()), int((~dom).sum())

    return _census("fast2sum exact + bound", fmt, samples, seed, body)


_TABLE_BETAS = (0.999, 0.99, 0.95)


def _rn_fraction(fmt: FloatFormat, q: Fraction) -> Fraction:
    # reference rounding on rationals: nearest multiple of the local spacing, ties to even
    if q == 0:
        return Fraction(0)
    mag = abs(q)
    e = mag.numerator.bit_length() - mag.denominator.bit_length()
    if Fraction(2) ** e > mag:
        e -= 1
    quantum = Fraction(2) ** (max(e, fmt.e_min) - fmt.mant_bits)
    k, rem = divmod(mag, quantum)
    if rem * 2 > quantum or (rem * 2 == quantum and k % 2 == 1):
        k += 1
    return (k * quantum) * (1 if q > 0 else -1)


def check_expansions(fmt: FloatFormat = BF16) -> CheckResult:
    """Two-component expansions of the standard beta2 values against a rational oracle."""
    t0 = time.perf_counter()
    failures, shown = 0, []
    for beta in _TABLE_BETAS:
        hi, lo = expansion.expand(fmt, beta)
        q = Fraction(beta)
        want_hi = _rn_fraction(fmt, q)
        want_lo = _rn_fraction(fmt, q - want_hi)
        if Fraction(hi) != want_hi or Fraction(lo) != want_lo:
            failures += 1
        shown.append(f"{beta}->({hi:.4f}, {lo:.4f})")
    return CheckResult(
        "beta2 expansions", fmt.name, failures == 0, len(_TABLE_BETAS), failures,
        detail="; ".join(shown), seconds=time.perf_counter() - t0,
    )


def check_memory_table(fmt: FloatFormat = BF16) -> CheckResult:
    failures, shown = 0, []
    for tag, want in EXPECTED_BYTES.items():
        strat = Strategy.parse(tag, fmt)
        analytic = memory_bytes_per_param(strat)
        counted = init_state(strat, 4, HyperParams()).bytes_per_param()
        if fmt is BF16 and analytic != want or analytic != counted:
            failures += 1
        shown.append(f"{tag}={analytic}")
    return CheckResult("memory bytes/param", fmt.name, failures == 0, len(EXPECTED_BYTES),
                       failures, detail=" ".join(shown))


def check_lost_arithmetic() -> CheckResult:
    cases = [
        lp_add(BF16, 200.0, 0.1) == 200.0,
        ulp(BF16, 200.0) == 1.0,
        round_to(BF16, 0.999) == 1.0,
    ]
    failures = cases.count(False)
    return CheckResult("lost-arithmetic witnesses", "bf16", failures == 0, len(cases), failures)


def run_checks(formats=("bf16",), samples=None, seed=0, emit=print) -> list[CheckResult]:
    results = []

    def add(r):
        results.append(r)
        if emit:
            emit(r.line())

    for name in formats:
        fmt = get_format(name)
        add(check_two_sum(fmt, samples, seed))
        if 2 * fmt.precision <= 53:
            add(check_two_prod_fma(fmt, samples, seed))
        add(check_fast2sum(fmt, samples, seed))
        if fmt.width == 16 or fmt is BF16:
            add(check_expansions(fmt))
    add(check_memory_table())
    add(check_lost_arithmetic())
    return results
