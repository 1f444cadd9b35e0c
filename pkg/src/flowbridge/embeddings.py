"""Conditioning embeddings: circular task codes, scale rows, step features."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import autodiff as ad
from .errors import ContractError


class DecoderKind(str, Enum):
    CLASSIFY = "classify"
    DENSE_REGRESS = "dense_regress"
    RETRIEVE = "retrieve"


@dataclass(frozen=True)
class TaskSpec:
    task_id: int
    num_tasks: int
    embed_dim: int
    decoder_kind: DecoderKind = DecoderKind.CLASSIFY

    def __post_init__(self):
        if self.num_tasks < 1:
            raise ContractError(f"num_tasks must be positive, got {self.num_tasks}")
        if not 0 <= self.task_id < self.num_tasks:
            raise ContractError(f"task_id {self.task_id} outside [0, {self.num_tasks})")
        if self.embed_dim < 2 or self.embed_dim % 2:
            raise ContractError(f"embed_dim must be even and >= 2, got {self.embed_dim}")
        object.__setattr__(self, "decoder_kind", DecoderKind(self.decoder_kind))


def task_angle(task_id: int, num_tasks: int) -> float:
    return 2.0 * math.pi * task_id / num_tasks


def circular_task_embed(spec: TaskSpec) -> np.ndarray:
    """Place the task on the unit circle and expand it over d/2 harmonics.

    Returns ``[cos θ, sin θ, cos 2θ, sin 2θ, ..., cos(d/2 θ), sin(d/2 θ)]``
    with ``θ = 2π t / T``. There is no constant (frequency zero) slot.
    """
    return harmonic_code(spec.task_id, spec.num_tasks, spec.embed_dim)


def harmonic_code(t: int, num_tasks: int, embed_dim: int) -> np.ndarray:
    """Circular code for any integer ``t``; periodic in ``t`` with period T.

    Each harmonic's angle ``k θ_t`` is reduced to ``2π ((k t) mod T) / T``
    before the trig call, so ``t`` and ``t + T`` give bitwise equal codes.
    """
    k = np.arange(1, embed_dim // 2 + 1, dtype=np.int64)
    harmonics = ((k * t) % num_tasks).astype(np.float64) * (2.0 * math.pi / num_tasks)
    out = np.empty(embed_dim, dtype=np.float64)
    out[0::2] = np.cos(harmonics)
    out[1::2] = np.sin(harmonics)
    return out


def task_table(num_tasks: int, embed_dim: int, variant: str = "circular", seed: int = 0) -> np.ndarray:
    """One embedding row per task for the chosen conditioning variant.

    ``circular`` is the default scheme; ``random`` draws a frozen Gaussian
    vector per task (rescaled to the circular norm); ``constant`` gives every
    task the code of task 0, removing all task information.
    """
    if variant == "circular":
        rows = [circular_task_embed(TaskSpec(t, num_tasks, embed_dim)) for t in range(num_tasks)]
        return np.stack(rows)
    if variant == "random":
        rng = np.random.default_rng([seed, 7919])
        table = rng.standard_normal((num_tasks, embed_dim))
        return table * (math.sqrt(embed_dim / 2) / np.linalg.norm(table, axis=1, keepdims=True))
    if variant == "constant":
        row = circular_task_embed(TaskSpec(0, num_tasks, embed_dim))
        return np.tile(row, (num_tasks, 1))
    raise ContractError(f"unknown task embedding variant {variant!r}")


@dataclass
class ScaleTable:
    """Learnable per-level embedding rows plus each level's pooling factor."""

    table: ad.Tensor
    level_factors: list[int] = field(default_factory=lambda: [1])

    def __post_init__(self):
        if self.table.ndim != 2 or self.table.shape[0] != len(self.level_factors):
            raise ContractError(
                f"scale table has {self.table.shape[0]} rows for {len(self.level_factors)} levels")
        if any(f < 1 for f in self.level_factors):
            raise ContractError(f"level factors must be positive, got {self.level_factors}")

    @property
    def num_levels(self) -> int:
        return self.table.shape[0]

    @classmethod
    def init(cls, level_factors: list[int], d_model: int, seed: int, std: float = 0.02) -> "ScaleTable":
        rng = np.random.default_rng(seed)
        rows = rng.normal(0.0, std, size=(len(level_factors), d_model))
        return cls(ad.Tensor(rows, requires_grad=True, name="scale_table"), list(level_factors))

    def check_grid(self, grid_side: int) -> None:
        for f in self.level_factors:
            if grid_side % f:
                raise ContractError(f"level factor {f} does not divide grid side {grid_side}")


def scale_embed(table: ScaleTable | ad.Tensor, level: int) -> ad.Tensor:
    """Row ``level`` of the scale table, recorded as a slice for gradients."""
    t = table.table if isinstance(table, ScaleTable) else table
    if not 0 <= level < t.shape[0]:
        raise ContractError(f"scale level {level} outside [0, {t.shape[0]})")
    return ad.select(t, (level,))


def step_embed(tau, d_model: int, max_period: float = 10000.0, time_scale: float = 1000.0) -> np.ndarray:
    """Sinusoidal features of normalized time ``tau`` in [0, 1].

    Layout is ``[cos(ω_0 τ'), ..., cos(ω_{h-1} τ'), sin(ω_0 τ'), ...]`` with
    ``h = d_model / 2``, ``τ' = time_scale * τ`` and geometric frequencies
    ``ω_i = max_period ** (-i / h)``. Accepts a scalar or a 1-D array of
    times; the latter returns one row per time.
    """
    if d_model < 2 or d_model % 2:
        raise ContractError(f"d_model must be even and >= 2, got {d_model}")
    tau_arr = np.asarray(tau, dtype=np.float64)
    if np.any(tau_arr < 0.0) or np.any(tau_arr > 1.0) or not np.all(np.isfinite(tau_arr)):
        raise ContractError(f"step time must lie in [0, 1], got {tau}")
    half = d_model // 2
    freqs = max_period ** (-np.arange(half, dtype=np.float64) / half)
    args = time_scale * tau_arr[..., None] * freqs
    return np.concatenate([np.cos(args), np.sin(args)], axis=-1)
