"""Token batch containers shared by the field, the flow engine and the tasks."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import ContractError


def grid_side_of(num_tokens: int) -> int:
    side = math.isqrt(num_tokens)
    if side * side != num_tokens:
        raise ContractError(f"token count {num_tokens} is not a perfect square")
    return side


@dataclass
class RepBatch:
    """Token representations ``[batch, tokens, channels]`` at one scale level."""

    data: np.ndarray
    level: int = 0

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ContractError(f"RepBatch needs [B, P, D] data, got shape {self.data.shape}")
        grid_side_of(self.data.shape[1])
        if not np.isfinite(self.data).all():
            raise ContractError("RepBatch data contains non-finite values")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def grid_side(self) -> int:
        return grid_side_of(self.data.shape[1])

    def __len__(self) -> int:
        return self.data.shape[0]


@dataclass
class MultiScaleTokens:
    """One RepBatch per level, finest first."""

    levels: list[RepBatch]

    def __post_init__(self):
        if not self.levels:
            raise ContractError("MultiScaleTokens needs at least one level")
        channels = {lv.shape[2] for lv in self.levels}
        batches = {lv.shape[0] for lv in self.levels}
        if len(channels) != 1 or len(batches) != 1:
            raise ContractError("all levels must share batch size and channel count")
        for i, lv in enumerate(self.levels):
            if lv.level != i:
                raise ContractError(f"level {i} is tagged {lv.level}")

    def __getitem__(self, i: int) -> RepBatch:
        return self.levels[i]

    def __len__(self) -> int:
        return len(self.levels)

    def __iter__(self) -> Iterator[RepBatch]:
        return iter(self.levels)

    @property
    def batch_size(self) -> int:
        return self.levels[0].shape[0]

    def take(self, idx: np.ndarray) -> "MultiScaleTokens":
        return MultiScaleTokens([RepBatch(lv.data[idx], lv.level) for lv in self.levels])
