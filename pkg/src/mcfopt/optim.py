"""AdamW with selectable precision strategies.

Strategies (memory in bytes/parameter, counting parameter and gradient):

=========  ==============================================  ====
tag        storage                                         B/p
=========  ==============================================  ====
A          work-format parameters and moments              8
B          A + second parameter component (MCF)            10
C          B + second component for the 2nd moment, MCF    12
           beta2
D          work-format shadow + high-format master and     16
           moments
D-MW-off   work-format parameters, high-format moments     12
kahan      A + Kahan compensation buffer                   10
sr         A with stochastic rounding of the update        8
=========  ==============================================  ====

Scalars such as bias corrections and ``lr * weight_decay`` stay in binary64
and touch a tensor through a single rounding (:func:`~mcfopt.formats.lp_scale`).
Everything elementwise is done with rounded operations of the moment format.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .expansion import Expansion, expand, mul, safe_grow
from .formats import (
    BF16,
    FP32,
    FloatFormat,
    LpTensor,
    get_format,
    lp_add,
    lp_div,
    lp_mul,
    lp_offset,
    lp_scale,
    lp_sqrt,
    lp_sub,
    round_to,
    stochastic_round,
    ulp,
)
from .rng import SplitMix64, derive_seed

__all__ = [
    "Tag",
    "Strategy",
    "Schedule",
    "HyperParams",
    "StrategyState",
    "StepReport",
    "StepRejected",
    "init_state",
    "adamw_step",
    "memory_bytes_per_param",
    "weight_decay_threshold",
    "expansion_update",
    "kahan_update",
]


class StepRejected(RuntimeError):
    """An optimizer step was refused; the state is left untouched."""


class Tag(str, Enum):
    PLAIN = "A"
    EXPANDED_PARAMS = "B"
    EXPANDED_PARAMS_AND_MOMENT = "C"
    MASTER_WEIGHTS = "D"
    FP32_OPTIM = "D-MW-off"
    KAHAN = "kahan"
    SR = "sr"

    def __str__(self) -> str:
        return self.value


_TAG_ALIASES = {
    "a": Tag.PLAIN,
    "plain": Tag.PLAIN,
    "b": Tag.EXPANDED_PARAMS,
    "collage-light": Tag.EXPANDED_PARAMS,
    "c": Tag.EXPANDED_PARAMS_AND_MOMENT,
    "collage-plus": Tag.EXPANDED_PARAMS_AND_MOMENT,
    "d": Tag.MASTER_WEIGHTS,
    "master-weights": Tag.MASTER_WEIGHTS,
    "d-mw-off": Tag.FP32_OPTIM,
    "fp32-optim": Tag.FP32_OPTIM,
    "kahan": Tag.KAHAN,
    "sr": Tag.SR,
}


@dataclass(frozen=True)
class Strategy:
    tag: Tag
    work_format: FloatFormat = BF16
    high_format: FloatFormat = FP32

    @classmethod
    def parse(cls, name: str, work_format="bf16", high_format="fp32") -> "Strategy":
        try:
            tag = _TAG_ALIASES[name.strip().lower()]
        except KeyError:
            raise ValueError(
                f"unknown strategy {name!r}; expected one of {sorted(_TAG_ALIASES)}"
            ) from None
        return cls(tag, get_format(work_format), get_format(high_format))

    @property
    def moment_format(self) -> FloatFormat:
        if self.tag in (Tag.MASTER_WEIGHTS, Tag.FP32_OPTIM):
            return self.high_format
        return self.work_format

    def manifest(self) -> dict[str, FloatFormat]:
        """Persistent per-parameter tensors (gradient excluded) and their formats."""
        w, mf = self.work_format, self.moment_format
        tensors = {"theta": w, "m": mf, "v": mf}
        if self.tag in (Tag.EXPANDED_PARAMS, Tag.EXPANDED_PARAMS_AND_MOMENT, Tag.KAHAN):
            tensors["resid"] = w
        if self.tag is Tag.EXPANDED_PARAMS_AND_MOMENT:
            tensors["v_lo"] = w
        if self.tag is Tag.MASTER_WEIGHTS:
            tensors["master"] = self.high_format
        return tensors

    def __str__(self) -> str:
        return self.tag.value


def memory_bytes_per_param(strategy: Strategy | str) -> int:
    """Parameter + gradient + optimizer state + MCF/master bytes per parameter."""
    if isinstance(strategy, str):
        strategy = Strategy.parse(strategy)
    grad = strategy.work_format.nbytes
    return grad + sum(f.nbytes for f in strategy.manifest().values())


def weight_decay_threshold(fmt: FloatFormat, alpha: float, lam: float) -> bool:
    """True when multiplicative decay ``(1 - alpha*lam) * theta`` is lost near 1.0."""
    if alpha <= 0 or lam <= 0:
        raise ValueError("alpha and lambda must be positive")
    return alpha * lam < ulp(fmt, 1.0) / 2


@dataclass(frozen=True)
class Schedule:
    kind: str = "constant"
    warmup_steps: int = 0
    total_steps: int | None = None
    min_ratio: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "cosine"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "cosine" and not self.total_steps:
            raise ValueError("cosine schedule needs total_steps")

    def factor(self, t: int) -> float:
        if self.warmup_steps and t <= self.warmup_steps:
            return t / self.warmup_steps
        if self.kind == "constant":
            return 1.0
        span = max(self.total_steps - self.warmup_steps, 1)
        progress = min(max((t - self.warmup_steps) / span, 0.0), 1.0)
        return self.min_ratio + (1 - self.min_ratio) * 0.5 * (1 + math.cos(math.pi * progress))


@dataclass(frozen=True)
class HyperParams:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    schedule: Schedule = field(default_factory=Schedule)
    # True: sqrt(v_hat + eps); False: the more common sqrt(v_hat) + eps
    eps_inside_sqrt: bool = True
    clip_norm: float | None = None

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.lr <= 0 or self.eps <= 0 or self.weight_decay < 0:
            raise ValueError("need lr > 0, eps > 0, weight_decay >= 0")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")


@dataclass
class StepReport:
    t: int
    lr: float
    intended: np.ndarray
    effective: np.ndarray


@dataclass
class StrategyState:
    strategy: Strategy
    theta: LpTensor
    m: LpTensor
    v: LpTensor
    resid: LpTensor | None = None  # lo part of theta (B/C) or Kahan c
    v_lo: LpTensor | None = None
    beta2_exp: Expansion | None = None
    master: LpTensor | None = None
    t: int = 0
    rng: SplitMix64 | None = None

    @property
    def n(self) -> int:
        return len(self.theta)

    def param_view(self) -> np.ndarray:
        """Work-format parameters the model computes with (hi part / shadow)."""
        return self.theta.data

    def param_wide(self) -> np.ndarray:
        """The full stored parameter value, evaluated exactly in binary64."""
        if self.master is not None:
            return self.master.data.copy()
        if self.resid is not None:
            return self.theta.data + self.resid.data
        return self.theta.data.copy()

    def tensors(self) -> dict[str, LpTensor]:
        names = ("theta", "m", "v", "resid", "v_lo", "master")
        return {k: getattr(self, k) for k in names if getattr(self, k) is not None}

    def bytes_per_param(self) -> int:
        grad = self.strategy.work_format.nbytes
        return grad + sum(t.fmt.nbytes for t in self.tensors().values())


def init_state(strategy: Strategy, params, hp: HyperParams, seed: int = 0) -> StrategyState:
    """Fresh state: parameters rounded to the work format, zero moments and residuals."""
    w, mf = strategy.work_format, strategy.moment_format
    if isinstance(params, (int, np.integer)):
        params = np.zeros(int(params))
    theta = LpTensor.from_wide(w, params)
    n = len(theta)
    state = StrategyState(strategy, theta, LpTensor.zeros(mf, n), LpTensor.zeros(mf, n))
    tag = strategy.tag
    if tag in (Tag.EXPANDED_PARAMS, Tag.EXPANDED_PARAMS_AND_MOMENT, Tag.KAHAN):
        state.resid = LpTensor.zeros(w, n)
    if tag is Tag.EXPANDED_PARAMS_AND_MOMENT:
        state.v_lo = LpTensor.zeros(w, n)
        state.beta2_exp = expand(w, hp.beta2)
        if not (math.isfinite(state.beta2_exp.hi) and math.isfinite(state.beta2_exp.lo)):
            raise ValueError(f"beta2 = {hp.beta2} has no finite {w} expansion")
    if tag is Tag.MASTER_WEIGHTS:
        state.master = LpTensor(strategy.high_format, theta.data.copy())
    if tag is Tag.SR:
        state.rng = SplitMix64(derive_seed(seed, "stochastic-rounding"))
    return state


def _as_grad(state: StrategyState, grad) -> np.ndarray:
    g = grad.data if isinstance(grad, LpTensor) else np.asarray(grad, dtype=np.float64).reshape(-1)
    if g.shape != (state.n,):
        raise StepRejected(f"gradient has {g.size} entries, parameters have {state.n}")
    if not np.all(np.isfinite(g)):
        bad = int(np.flatnonzero(~np.isfinite(g))[0])
        raise StepRejected(f"non-finite gradient entry {bad} at step {state.t + 1}")
    return np.asarray(round_to(state.strategy.work_format, g))


def _wide_norm(x: np.ndarray) -> float:
    return math.sqrt(math.fsum(x * x))


def adamw_step(state: StrategyState, grad, hp: HyperParams) -> StepReport:
    """One AdamW update of ``state`` in place; returns intended and realized updates."""
    strat = state.strategy
    tag, w, mf = strat.tag, strat.work_format, strat.moment_format
    g = _as_grad(state, grad)
    t = state.t + 1
    lr = hp.lr * hp.schedule.factor(t)

    if hp.clip_norm is not None:
        norm = _wide_norm(g)
        if norm > hp.clip_norm:
            g = np.asarray(lp_scale(w, g, hp.clip_norm / norm))

    b1, b2 = hp.beta1, hp.beta2
    m = lp_add(mf, lp_scale(mf, state.m.data, b1), lp_scale(mf, g, 1 - b1))
    g2 = lp_mul(mf, g, g)
    v_lo = None
    if tag is Tag.EXPANDED_PARAMS_AND_MOMENT:
        prev = Expansion(w, state.v.data, state.v_lo.data)
        grown = safe_grow(_mul_scalar_exp(state.beta2_exp, prev), lp_scale(w, g2, 1 - b2))
        v, v_lo = grown.hi, grown.lo
    else:
        v = lp_add(mf, lp_scale(mf, state.v.data, b2), lp_scale(mf, g2, 1 - b2))

    m_hat = lp_scale(mf, m, 1 / (1 - b1**t))
    v_hat = lp_scale(mf, v, 1 / (1 - b2**t))
    if hp.eps_inside_sqrt:
        denom = lp_sqrt(mf, lp_offset(mf, v_hat, hp.eps))
    else:
        denom = lp_offset(mf, lp_sqrt(mf, v_hat), hp.eps)
    step = lp_scale(mf, lp_div(mf, m_hat, denom), lr)
    if hp.weight_decay:
        decay_base = state.master.data if state.master is not None else state.theta.data
        step = lp_add(mf, step, lp_scale(mf, decay_base, lr * hp.weight_decay))
    delta = -np.asarray(step)

    before = state.param_wide()
    new: dict[str, np.ndarray] = {"m": m, "v": v}
    if v_lo is not None:
        new["v_lo"] = v_lo
    theta = state.theta.data
    if tag is Tag.PLAIN:
        new["theta"] = lp_add(w, theta, delta)
    elif tag in (Tag.EXPANDED_PARAMS, Tag.EXPANDED_PARAMS_AND_MOMENT):
        new["theta"], new["resid"] = expansion_update(w, theta, state.resid.data, delta)
    elif tag is Tag.MASTER_WEIGHTS:
        master = lp_add(strat.high_format, state.master.data, delta)
        new["master"] = master
        new["theta"] = round_to(w, master)
    elif tag is Tag.FP32_OPTIM:
        new["theta"] = lp_offset(w, theta, delta)
    elif tag is Tag.KAHAN:
        new["theta"], new["resid"] = kahan_update(w, theta, state.resid.data, delta)
    elif tag is Tag.SR:
        try:
            new["theta"] = stochastic_round(w, theta + delta, state.rng)
        except ValueError as exc:
            raise StepRejected(f"{exc} at step {t}") from None
    else:  # pragma: no cover
        raise AssertionError(tag)

    for name, arr in new.items():
        if not np.all(np.isfinite(arr)):
            raise StepRejected(f"non-finite values in {name} at step {t}")
    for name, arr in new.items():
        getattr(state, name).data = np.asarray(arr, dtype=np.float64)
    state.t = t
    after = state.param_wide()
    return StepReport(t, lr, delta.astype(np.float64), after - before)


def expansion_update(fmt: FloatFormat, theta, lo, delta):
    """Add ``delta`` to the expansion ``(theta, lo)``; returns the new pair."""
    grown = safe_grow(Expansion(fmt, theta, lo), delta)
    return grown.hi, grown.lo


def kahan_update(fmt: FloatFormat, theta, c, delta):
    """Compensated update: fold ``c`` into ``delta``, add, recover what was lost."""
    comp = lp_add(fmt, delta, c)
    new_theta = lp_add(fmt, theta, comp)
    return new_theta, lp_sub(fmt, comp, lp_sub(fmt, new_theta, theta))


def _mul_scalar_exp(beta: Expansion, v: Expansion) -> Expansion:
    n = np.size(v.hi)
    b = Expansion(beta.fmt, np.full(n, beta.hi), np.full(n, beta.lo))
    return mul(b, v)
