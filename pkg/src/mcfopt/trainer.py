"""Desk-scale training problems with closed-form gradients.

Forward and backward passes emulate a mixed-precision GEMM: multiplicands
are rounded to the work format, products and sums are accumulated in
binary64, and the finished gradient is rounded once to the work format.
Passing ``fmt=None`` skips every rounding (used for gradient checks).

Data come from :class:`~mcfopt.rng.SplitMix64` streams derived from the
task seed, so a dataset is bit-identical on every platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .formats import FloatFormat, round_to
from .metrics import MetricsRecord
from .optim import HyperParams, StepRejected, Strategy, StrategyState, adamw_step, init_state
from .rng import SplitMix64, derive_seed

__all__ = [
    "TASK_KINDS",
    "Task",
    "Dataset",
    "RunConfig",
    "RunResult",
    "TrainingError",
    "gen_synthetic",
    "init_params",
    "n_params",
    "forward_backward",
    "run",
    "pathology_config",
]

TASK_KINDS = ("linear-regression", "logistic-regression", "mlp-2layer")


class TrainingError(RuntimeError):
    """A run could not continue (non-finite loss or a rejected step)."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


@dataclass(frozen=True)
class Task:
    kind: str = "linear-regression"
    input_dim: int = 16
    hidden_dim: int = 16
    n_samples: int = 512
    noise_std: float = 0.01
    seed: int = 0
    # ground-truth weights are uniform in [-weight_scale, weight_scale]
    weight_scale: float = 1.0
    # constant added to every ground-truth weight; large offsets put the
    # optimum where the work-format grid is coarse
    weight_offset: float = 0.0

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}; expected one of {TASK_KINDS}")
        if self.input_dim < 1 or self.hidden_dim < 1 or self.n_samples < 1:
            raise ValueError("task dimensions must be >= 1")
        if self.noise_std < 0 or self.weight_scale < 0:
            raise ValueError("noise_std and weight_scale must be >= 0")


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray  # (n, d)
    targets: np.ndarray  # (n,)
    truth: np.ndarray  # flattened ground-truth parameters


def n_params(task: Task) -> int:
    d, h = task.input_dim, task.hidden_dim
    if task.kind == "mlp-2layer":
        return h * d + h + h + 1
    return d


def _unpack_mlp(task: Task, p: np.ndarray):
    d, h = task.input_dim, task.hidden_dim
    w1 = p[: h * d].reshape(h, d)
    b1 = p[h * d : h * d + h]
    w2 = p[h * d + h : h * d + 2 * h]
    b2 = p[-1]
    return w1, b1, w2, b2


def _predict_wide(task: Task, p: np.ndarray, x: np.ndarray) -> np.ndarray:
    if task.kind == "mlp-2layer":
        w1, b1, w2, b2 = _unpack_mlp(task, p)
        return np.tanh(x @ w1.T + b1) @ w2 + b2
    return x @ p


def gen_synthetic(task: Task) -> Dataset:
    """Unit-Gaussian inputs; targets from a hidden model plus Gaussian noise."""
    n, d = task.n_samples, task.input_dim
    x = SplitMix64(derive_seed(task.seed, "inputs")).normal((n, d))
    teacher = SplitMix64(derive_seed(task.seed, "truth"))
    k = n_params(task)
    truth = task.weight_offset + teacher.uniform(-task.weight_scale, task.weight_scale, k)
    noise = task.noise_std * SplitMix64(derive_seed(task.seed, "noise")).normal(n)
    z = _predict_wide(task, truth, x)
    if task.kind == "logistic-regression":
        y = (z + noise > 0).astype(np.float64)
    else:
        y = z + noise
    return Dataset(x, y, truth)


def init_params(task: Task, seed: int) -> np.ndarray:
    """Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per layer (not yet rounded)."""
    rng = SplitMix64(derive_seed(seed, "init"))
    d, h = task.input_dim, task.hidden_dim
    if task.kind != "mlp-2layer":
        r = 1 / math.sqrt(d)
        return rng.uniform(-r, r, d)
    r1, r2 = 1 / math.sqrt(d), 1 / math.sqrt(h)
    return np.concatenate(
        [rng.uniform(-r1, r1, h * d), rng.uniform(-r1, r1, h), rng.uniform(-r2, r2, h + 1)]
    )


def forward_backward(task: Task, params, inputs, targets, fmt: FloatFormat | None):
    """Mean loss over the batch and its gradient w.r.t. ``params``.

    Returns ``(loss, grad)`` with ``loss`` a Python float and ``grad`` a
    flat array of work-format values (binary64 when ``fmt`` is None).
    """

    def q(a):
        return a if fmt is None else np.asarray(round_to(fmt, a))

    p = q(np.asarray(params, dtype=np.float64))
    x = q(np.asarray(inputs, dtype=np.float64))
    y = np.asarray(targets, dtype=np.float64)
    b = x.shape[0]

    with np.errstate(over="ignore", invalid="ignore"):
        if task.kind == "linear-regression":
            r = x @ p - y
            loss = 0.5 * math.fsum(r * r) / b
            grad = x.T @ q(r) / b
        elif task.kind == "logistic-regression":
            z = x @ p
            loss = math.fsum(np.logaddexp(0.0, z) - y * z) / b
            sig = 0.5 * (1 + np.tanh(0.5 * z))
            grad = x.T @ q(sig - y) / b
        else:
            w1, b1, w2, b2 = _unpack_mlp(task, p)
            hid = q(np.tanh(x @ w1.T + b1))
            r = hid @ w2 + b2 - y
            loss = 0.5 * math.fsum(r * r) / b
            rq = q(r)
            g_w2 = hid.T @ rq / b
            g_b2 = math.fsum(rq) / b
            dz = q(np.outer(rq, w2) * (1 - hid * hid))
            g_w1 = dz.T @ x / b
            g_b1 = dz.sum(axis=0) / b
            grad = np.concatenate([g_w1.reshape(-1), g_b1, g_w2, [g_b2]])

    if not math.isfinite(loss):
        raise TrainingError("non-finite loss")
    return loss, q(grad)


@dataclass(frozen=True)
class RunConfig:
    task: Task = field(default_factory=Task)
    strategy: Strategy = field(default_factory=lambda: Strategy.parse("C"))
    hp: HyperParams = field(default_factory=HyperParams)
    steps: int = 500
    batch_size: int = 32
    seed: int = 0
    # AdamW is invariant to gradient scale, so shrinking updates is done by
    # scaling the learning rate instead
    grad_scale: float = 1.0
    record_every: int = 1

    def __post_init__(self):
        if isinstance(self.strategy, str):
            object.__setattr__(self, "strategy", Strategy.parse(self.strategy))
        if self.steps < 1 or self.batch_size < 1 or self.record_every < 1:
            raise ValueError("steps, batch_size and record_every must be >= 1")
        if self.batch_size > self.task.n_samples:
            raise ValueError("batch_size exceeds n_samples")
        if not (self.grad_scale > 0 and math.isfinite(self.grad_scale)):
            raise ValueError("grad_scale must be positive and finite")


@dataclass
class RunResult:
    records: list[MetricsRecord]
    initial_loss: float
    final_loss: float
    state: StrategyState


def _batch(ds: Dataset, step: int, size: int):
    n = ds.inputs.shape[0]
    idx = (((step - 1) * size) + np.arange(size)) % n
    return ds.inputs[idx], ds.targets[idx]


def run(config: RunConfig, dataset: Dataset | None = None) -> RunResult:
    """Train from scratch; records are emitted every ``record_every`` steps."""
    task, strat = config.task, config.strategy
    w = strat.work_format
    ds = dataset if dataset is not None else gen_synthetic(task)
    hp = config.hp
    if config.grad_scale != 1.0:
        hp = replace(hp, lr=hp.lr * config.grad_scale)
    state = init_state(strat, init_params(task, config.seed), hp, seed=config.seed)
    initial_loss, _ = forward_backward(task, state.param_view(), ds.inputs, ds.targets, w)

    records: list[MetricsRecord] = []
    for t in range(1, config.steps + 1):
        xb, yb = _batch(ds, t, config.batch_size)
        try:
            loss, grad = forward_backward(task, state.param_view(), xb, yb, w)
        except TrainingError as exc:
            raise TrainingError(str(exc), t) from None
        before = state.param_wide()
        try:
            report = adamw_step(state, grad, hp)
        except StepRejected as exc:
            raise TrainingError(str(exc), t) from exc
        if t % config.record_every == 0:
            records.append(
                MetricsRecord.from_step(t, strat, loss, report.intended, before, state.param_wide())
            )
    final_loss, _ = forward_backward(task, state.param_view(), ds.inputs, ds.targets, w)
    return RunResult(records, initial_loss, final_loss, state)


def pathology_config(strategy: Strategy | str = "C", steps: int = 3000, seed: int = 0) -> RunConfig:
    """BF16 regression whose optimum sits near 4, where an lr of 2e-3 is below half an ulp.

    Plain BF16 updates stall there, and BF16 second moments with beta2 = 0.999
    can only grow.
    """
    if isinstance(strategy, str):
        strategy = Strategy.parse(strategy)
    return RunConfig(
        task=Task(input_dim=16, n_samples=512, noise_std=0.01, weight_offset=4.0, seed=seed),
        strategy=strategy,
        hp=HyperParams(lr=2e-3, beta2=0.999),
        steps=steps,
        batch_size=32,
        seed=seed,
    )
