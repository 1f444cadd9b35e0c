"""Flow matching between source tokens and task representations.

Training regresses the field onto the straight-line velocity ``r_t - r0``
at states interpolated between the two; inference integrates the learned
field from the source tokens with ``N`` explicit Euler steps.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from . import autodiff as ad
from .embeddings import TaskSpec
from .errors import ContractError, NumericError
from .optim import AdamState, adamw_step, cosine_lr
from .tokens import MultiScaleTokens, RepBatch
from .velocity import VelocityField, VelocityParams, forward

log = logging.getLogger(__name__)

OBJECTIVES = ("flow", "direct")


@dataclass
class FlowConfig:
    K: int = 1000
    N: int = 10
    epochs: int = 20
    lr: float = 2e-3
    weight_decay: float = 0.01
    batch_size: int = 32
    seed: int = 0
    k_inclusive: bool = False
    per_task_training: bool = False
    warmup_steps: int = 50
    min_lr_ratio: float = 0.0
    # cosine horizon in epochs; 0 means "same as epochs"
    schedule_epochs: int = 0
    # "flow" regresses velocities; "direct" regresses r_t from r0 in one pass
    objective: str = "flow"

    def __post_init__(self):
        if self.K < 1 or self.N < 1:
            raise ContractError(f"K and N must be >= 1, got K={self.K}, N={self.N}")
        if self.lr <= 0:
            raise ContractError(f"learning rate must be positive, got {self.lr}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ContractError("epochs must be >= 0 and batch_size >= 1")
        if self.objective not in OBJECTIVES:
            raise ContractError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")


# -- token geometry ----------------------------------------------------------

def avg_pool_tokens(data: np.ndarray, factor: int) -> np.ndarray:
    """Non-overlapping ``factor x factor`` mean pooling of a row-major token grid."""
    B, P, D = data.shape
    side = math.isqrt(P)
    if side * side != P:
        raise ContractError(f"token count {P} is not a perfect square")
    if factor < 1 or side % factor:
        raise ContractError(f"factor {factor} does not divide grid side {side}")
    if factor == 1:
        return data
    s = side // factor
    return data.reshape(B, s, factor, s, factor, D).mean(axis=(2, 4)).reshape(B, s * s, D)


def multiscale_sample(r0: RepBatch, factors: Sequence[int]) -> MultiScaleTokens:
    """Pool the source grid once per level factor; level 0 uses ``factors[0]``."""
    if not factors:
        raise ContractError("need at least one level factor")
    return MultiScaleTokens([RepBatch(avg_pool_tokens(r0.data, f), level)
                             for level, f in enumerate(factors)])


# -- path --------------------------------------------------------------------

def _check_pair(a: RepBatch, b: RepBatch) -> None:
    if a.shape != b.shape:
        raise ContractError(f"shape mismatch {a.shape} vs {b.shape}")


def interpolate(r0: RepBatch, rt: RepBatch, k, K: int) -> RepBatch:
    """``(1 - k/K) r0 + (k/K) rt``; ``k`` may be an int or one per sample."""
    _check_pair(r0, rt)
    k = np.asarray(k)
    if np.any(k < 0) or np.any(k > K):
        raise ContractError(f"k must lie in [0, {K}]")
    w = (k / K).astype(r0.data.dtype)
    if w.ndim == 1:
        w = w[:, None, None]
    return RepBatch((1 - w) * r0.data + w * rt.data, r0.level)


def true_velocity(r0: RepBatch, rt: RepBatch) -> RepBatch:
    _check_pair(r0, rt)
    return RepBatch(rt.data - r0.data, r0.level)


# -- training ----------------------------------------------------------------

@dataclass
class TaskData:
    """Training pairs for one task: pooled source levels and target levels.

    With ``anchor="noise"`` the source levels are replaced by fresh unit
    Gaussian noise at every step; ``extra`` then carries the per-sample
    context appended to the conditioning vector.
    """

    spec: TaskSpec
    source: MultiScaleTokens
    target: MultiScaleTokens
    extra: np.ndarray | None = None
    anchor: str = "tokens"

    def __post_init__(self):
        if len(self.source) != len(self.target):
            raise ContractError("source and target have different level counts")
        for s, t in zip(self.source, self.target):
            _check_pair(s, t)
        if self.anchor not in ("tokens", "noise"):
            raise ContractError(f"anchor must be 'tokens' or 'noise', got {self.anchor!r}")

    def __len__(self) -> int:
        return self.source.batch_size


@dataclass
class StepResult:
    loss: float
    level_losses: list[float]


def flow_loss(params: VelocityParams, source: MultiScaleTokens, target: MultiScaleTokens,
              k: np.ndarray, K: int, spec: TaskSpec, extra: np.ndarray | None = None,
              step: int | None = None, objective: str = "flow") -> tuple[ad.Tensor, list[float]]:
    """Mean squared velocity error over batch, levels, tokens and channels.

    With ``objective="direct"`` the network sees ``r0`` at time 0 and must
    output ``r_t`` itself (one-step distillation); ``k`` is ignored.
    """
    direct = objective == "direct"
    tau = np.zeros(len(k)) if direct else k / K
    total = None
    count = 0
    level_losses = []
    for level, (s, t) in enumerate(zip(source, target)):
        _check_pair(s, t)
        r_k = s.data if direct else interpolate(s, t, k, K).data
        v_true = t.data if direct else t.data - s.data
        try:
            pred = forward(params, ad.Tensor._wrap(r_k, False), tau, level, spec, extra)
            sq = ad.sum_of_squares(ad.sub(pred, ad.Tensor._wrap(v_true, False)))
        except NumericError as exc:
            raise NumericError(f"step {step}, level {level}: {exc}") from exc
        level_losses.append(float(sq.data) / v_true.size)
        total = sq if total is None else ad.add(total, sq)
        count += v_true.size
    loss = ad.mul(total, 1.0 / count)
    if not np.isfinite(loss.data):
        raise NumericError(f"step {step}: non-finite loss")
    return loss, level_losses


def sample_k(rng: np.random.Generator, batch: int, K: int, inclusive: bool = False) -> np.ndarray:
    return rng.integers(0, K + 1 if inclusive else K, size=batch)


def train_step(params: VelocityParams, state: AdamState, source: MultiScaleTokens,
               target: MultiScaleTokens, spec: TaskSpec, cfg: FlowConfig,
               rng: np.random.Generator, lr: float | None = None,
               extra: np.ndarray | None = None) -> StepResult:
    """One optimizer step on a single-task batch; updates ``params`` in place."""
    k = sample_k(rng, source.batch_size, cfg.K, cfg.k_inclusive)
    with ad.GradTape() as tape:
        loss, level_losses = flow_loss(params, source, target, k, cfg.K, spec, extra,
                                       step=state.step, objective=cfg.objective)
    grads = tape.backward(loss)
    arrays = params.arrays
    adamw_step(params.numpy(), {n: grads[t] for n, t in arrays.items()},
               cfg.lr if lr is None else lr, cfg.weight_decay, state)
    return StepResult(float(loss.data), level_losses)


@dataclass
class TrainResult:
    params: VelocityParams
    state: AdamState
    history: list[dict] = field(default_factory=list)


def epoch_batches(dataset: Sequence[TaskData], batch_size: int, rng: np.random.Generator,
                  per_task: bool = False) -> list[tuple[int, np.ndarray]]:
    """Shuffled ``(task index, sample indices)`` batches for one epoch.

    Tasks are interleaved round-robin unless ``per_task`` is set.
    """
    per = []
    for data in dataset:
        perm = rng.permutation(len(data))
        per.append([perm[i:i + batch_size] for i in range(0, len(perm), batch_size)])
    if per_task:
        return [(t, b) for t, bs in enumerate(per) for b in bs]
    out = []
    for j in range(max(len(bs) for bs in per)):
        out.extend((t, bs[j]) for t, bs in enumerate(per) if j < len(bs))
    return out


def steps_per_epoch(dataset: Sequence[TaskData], batch_size: int) -> int:
    return sum(math.ceil(len(d) / batch_size) for d in dataset)


def train(dataset: Sequence[TaskData], params: VelocityParams, cfg: FlowConfig,
          state: AdamState | None = None, start_epoch: int = 0,
          evaluate: Callable[[VelocityParams, int], list[dict]] | None = None,
          on_epoch_end: Callable[[int, VelocityParams, AdamState, list[dict]], None] | None = None,
          ) -> TrainResult:
    """Run epochs ``start_epoch + 1 .. cfg.epochs``.

    Every epoch draws its shuffling and ``k`` samples from a generator
    seeded with ``cfg.seed ^ epoch``, so resuming from a checkpoint taken at
    an epoch boundary continues the exact same sequence.
    """
    if not dataset or any(len(d) == 0 for d in dataset):
        raise ContractError("dataset must contain at least one non-empty task")
    state = state or AdamState()
    result = TrainResult(params, state)
    horizon = (cfg.schedule_epochs or cfg.epochs) * steps_per_epoch(dataset, cfg.batch_size)
    for epoch in range(start_epoch, cfg.epochs):
        rng = np.random.default_rng(cfg.seed ^ epoch)
        sums = [np.zeros(len(d.source)) for d in dataset]
        totals = [0.0] * len(dataset)
        counts = [0] * len(dataset)
        for t, idx in epoch_batches(dataset, cfg.batch_size, rng, cfg.per_task_training):
            data = dataset[t]
            target = data.target.take(idx)
            extra = None if data.extra is None else data.extra[idx]
            if data.anchor == "noise":
                source = MultiScaleTokens([
                    RepBatch(rng.standard_normal(lv.shape).astype(lv.data.dtype), lv.level)
                    for lv in target])
            else:
                source = data.source.take(idx)
            lr = cosine_lr(cfg.lr, state.step, horizon, cfg.warmup_steps, cfg.min_lr_ratio)
            res = train_step(params, state, source, target, data.spec, cfg, rng, lr=lr, extra=extra)
            sums[t] += res.level_losses
            totals[t] += res.loss
            counts[t] += 1
        rows = []
        for t, data in enumerate(dataset):
            mean_loss = totals[t] / counts[t]
            for level, value in enumerate(sums[t] / counts[t]):
                rows.append({"epoch": epoch + 1, "task_id": data.spec.task_id, "split": "train",
                             "loss": mean_loss, "metric_name": f"level{level}_mse",
                             "metric_value": float(value)})
            log.info("epoch %d task %d loss %.6f", epoch + 1, data.spec.task_id, mean_loss)
        if evaluate is not None:
            rows.extend(evaluate(params, epoch + 1))
        result.history.extend(rows)
        if on_epoch_end is not None:
            on_epoch_end(epoch + 1, params, state, rows)
    return result


# -- inference ---------------------------------------------------------------

class ConstantField:
    """A field returning a fixed velocity per level, ignoring the state."""

    def __init__(self, velocities: Sequence[np.ndarray]):
        self.velocities = list(velocities)

    def __call__(self, r, tau, level, spec, extra=None):
        return self.velocities[level]


def as_field(model) -> Callable:
    if isinstance(model, VelocityParams):
        return VelocityField(model)
    if callable(model):
        return model
    raise ContractError(f"cannot use {type(model).__name__} as a velocity field")


def euler_path(model, tokens: MultiScaleTokens, spec: TaskSpec, N: int,
               extra: np.ndarray | None = None) -> Iterator[MultiScaleTokens]:
    """Yield the state before the first step and after each of the ``N`` steps."""
    if N < 1:
        raise ContractError(f"N must be >= 1, got {N}")
    field_fn = as_field(model)
    state = [lv.data for lv in tokens]
    yield tokens
    for n in range(N):
        tau = n / N
        nxt = []
        for level, r in enumerate(state):
            v = np.asarray(field_fn(r, tau, level, spec, extra))
            if v.shape != r.shape:
                raise ContractError(f"field returned {v.shape} for state {r.shape}")
            r = r + v / N
            if not np.isfinite(r).all():
                raise NumericError(f"euler step {n}: non-finite state at level {level}")
            nxt.append(r)
        state = nxt
        yield MultiScaleTokens([RepBatch(r, i) for i, r in enumerate(state)])


def euler_integrate(model, tokens: MultiScaleTokens, spec: TaskSpec, N: int,
                    extra: np.ndarray | None = None) -> MultiScaleTokens:
    """Integrate ``r <- r + f(r, n/N, l, e_t) / N`` for ``n = 0 .. N-1`` per level."""
    state = tokens
    for state in euler_path(model, tokens, spec, N, extra):
        pass
    return state
