"""Model checkpoints on top of the binary container."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import serialization
from .errors import ContractError, FormatError
from .optim import AdamState
from .tasks import ORACLE, DirectModel
from .velocity import ArchDescriptor, VelocityParams, param_shapes

KINDS = ("velocity", "osd", "oracle")


@dataclass
class Checkpoint:
    kind: str
    arch: ArchDescriptor
    params: VelocityParams | None = None
    state: AdamState | None = None
    epoch: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def model(self):
        """What evaluation should run: trained field, one-step regressor or the oracle."""
        if self.kind == "oracle":
            return ORACLE
        if self.kind == "osd":
            return DirectModel(self.params)
        return self.params


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    if ckpt.kind not in KINDS:
        raise ContractError(f"checkpoint kind must be one of {KINDS}, got {ckpt.kind!r}")
    tensors: dict[str, np.ndarray] = {}
    if ckpt.params is not None:
        for name, t in ckpt.params.arrays.items():
            tensors[f"params/{name}"] = t.data
        tensors["task_codes"] = ckpt.params.task_codes
    step = 0
    if ckpt.state is not None:
        step = ckpt.state.step
        for name in sorted(ckpt.state.m):
            tensors[f"opt/m/{name}"] = ckpt.state.m[name]
            tensors[f"opt/v/{name}"] = ckpt.state.v[name]
    meta = {**ckpt.meta, "kind": ckpt.kind, "arch": ckpt.arch.to_dict(), "epoch": ckpt.epoch, "step": step}
    serialization.save(path, meta, tensors)


def load_checkpoint(path: str | Path) -> Checkpoint:
    meta, tensors = serialization.load(path)
    kind = meta.get("kind")
    if kind not in KINDS:
        raise FormatError(f"{path}: not a model checkpoint (kind={kind!r})")
    arch = ArchDescriptor.from_dict(meta["arch"])
    params = state = None
    if kind != "oracle":
        shapes = param_shapes(arch)
        arrays = {}
        for name, shape in shapes.items():
            data = tensors.get(f"params/{name}")
            if data is None or data.shape != shape:
                raise FormatError(f"{path}: parameter {name} missing or misshapen")
            arrays[name] = ad.Tensor(data, requires_grad=True, name=name)
        params = VelocityParams(arch, arrays, tensors["task_codes"].astype(ad.get_dtype()))
        names = sorted(n[len("opt/m/"):] for n in tensors if n.startswith("opt/m/"))
        state = AdamState(step=int(meta.get("step", 0)),
                          m={n: tensors[f"opt/m/{n}"].copy() for n in names},
                          v={n: tensors[f"opt/v/{n}"].copy() for n in names})
    return Checkpoint(kind, arch, params, state, int(meta.get("epoch", 0)), meta)
