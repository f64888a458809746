"""Update-quality metrics: how much of the intended step actually landed.

All reductions use ``math.fsum`` so values are reproducible independent of
BLAS summation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "MetricsRecord",
    "effective_update",
    "edq",
    "imprecision_pct",
    "l2_norm",
    "CSV_COLUMNS",
]

CSV_COLUMNS = (
    "step",
    "strategy",
    "loss",
    "edq",
    "intended_norm",
    "effective_norm",
    "imprecision_pct",
    "param_norm",
)


def _vec(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64).reshape(-1)


def l2_norm(x) -> float:
    x = _vec(x)
    return math.sqrt(math.fsum(x * x))


def effective_update(before, after) -> np.ndarray:
    """Realized change of the (fully evaluated) parameters."""
    return _vec(after) - _vec(before)


def edq(intended, effective) -> float:
    """Projection of the realized update onto the unit intended direction.

    Equals ``||intended||`` when the update lands exactly and drops to zero
    when it is entirely lost. A zero intended update gives 0.
    """
    i, e = _vec(intended), _vec(effective)
    if i.shape != e.shape:
        raise ValueError(f"shape mismatch {i.shape} vs {e.shape}")
    norm = l2_norm(i)
    if norm == 0:
        return 0.0
    return math.fsum(i * e) / norm


def imprecision_pct(intended, effective) -> float:
    """Percentage of coordinates whose nonzero intended update was entirely lost."""
    i, e = _vec(intended), _vec(effective)
    if i.shape != e.shape:
        raise ValueError(f"shape mismatch {i.shape} vs {e.shape}")
    if i.size == 0:
        return 0.0
    lost = (i != 0) & (e == 0)
    return 100.0 * np.count_nonzero(lost) / i.size


@dataclass(frozen=True)
class MetricsRecord:
    step: int
    strategy: str
    loss: float
    edq: float
    intended_norm: float
    effective_norm: float
    imprecision_pct: float
    param_norm: float
    degenerate: bool = False  # intended update was exactly zero

    def csv_row(self) -> list[str]:
        return [str(self.step), self.strategy] + [
            f"{getattr(self, c):.17e}" for c in CSV_COLUMNS[2:]
        ]

    @classmethod
    def from_step(cls, step, strategy, loss, intended, before, after) -> "MetricsRecord":
        eff = effective_update(before, after)
        inorm = l2_norm(intended)
        return cls(
            step=step,
            strategy=str(strategy),
            loss=float(loss),
            edq=edq(intended, eff),
            intended_norm=inorm,
            effective_norm=l2_norm(eff),
            imprecision_pct=imprecision_pct(intended, eff),
            param_norm=l2_norm(after),
            degenerate=inorm == 0,
        )
