"""Learnable velocity field over token grids.

The network maps ``[batch, tokens, channels]`` to the same shape. A fused
conditioning vector (step features, scale row, task code, optional extra
context) drives per-block shift/scale/gate modulation of layer-normalized
activations. The modulation projections start at zero, so every block is an
identity residual at initialization.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .embeddings import TaskSpec, scale_embed, step_embed, task_table
from .errors import ContractError
from .tokens import RepBatch

MIXERS = ("attention", "mlp_mixer")
TASK_EMBEDS = ("circular", "random", "constant")


@dataclass(frozen=True)
class ArchDescriptor:
    n_blocks: int = 4
    d_model: int = 64
    mixing: str = "attention"
    n_heads: int = 4
    cond_dim: int = 64
    data_dim: int = 32
    level_factors: tuple[int, ...] = (1,)
    num_tasks: int = 1
    task_embed_dim: int = 16
    task_embed: str = "circular"
    extra_cond_dim: int = 0
    mlp_ratio: int = 4

    def __post_init__(self):
        object.__setattr__(self, "level_factors", tuple(int(f) for f in self.level_factors))
        for name in ("n_blocks", "d_model", "n_heads", "cond_dim", "data_dim", "num_tasks", "mlp_ratio"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be positive, got {getattr(self, name)}")
        if self.mixing not in MIXERS:
            raise ContractError(f"mixing must be one of {MIXERS}, got {self.mixing!r}")
        if self.mixing == "attention" and self.d_model % self.n_heads:
            raise ContractError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.d_model % 2:
            raise ContractError("d_model must be even for the step embedding")
        if self.task_embed_dim < 2 or self.task_embed_dim % 2:
            raise ContractError(f"task_embed_dim must be even and >= 2, got {self.task_embed_dim}")
        if self.task_embed not in TASK_EMBEDS:
            raise ContractError(f"task_embed must be one of {TASK_EMBEDS}, got {self.task_embed!r}")
        if not self.level_factors or any(f < 1 for f in self.level_factors):
            raise ContractError(f"level_factors must be positive integers, got {self.level_factors}")
        if self.extra_cond_dim < 0:
            raise ContractError("extra_cond_dim must be non-negative")

    @property
    def num_levels(self) -> int:
        return len(self.level_factors)

    @property
    def cond_input_dim(self) -> int:
        return 2 * self.d_model + self.task_embed_dim + self.extra_cond_dim

    def to_dict(self) -> dict:
        d = asdict(self)
        d["level_factors"] = list(self.level_factors)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchDescriptor":
        return cls(**{**d, "level_factors": tuple(d["level_factors"])})


def param_shapes(arch: ArchDescriptor) -> dict[str, tuple[int, ...]]:
    """Names and shapes of every trainable array, in initialization order."""
    dm, D, c = arch.d_model, arch.data_dim, arch.cond_dim
    hidden = arch.mlp_ratio * dm
    shapes: dict[str, tuple[int, ...]] = {
        "in/w": (D, dm), "in/b": (dm,),
        "scale_table": (arch.num_levels, dm),
        "cond/w1": (arch.cond_input_dim, c), "cond/b1": (c,),
        "cond/w2": (c, c), "cond/b2": (c,),
    }
    for i in range(arch.n_blocks):
        p = f"blocks/{i}/"
        shapes[p + "mod/w"] = (c, 6 * dm)
        shapes[p + "mod/b"] = (6 * dm,)
        if arch.mixing == "attention":
            shapes[p + "qkv/w"] = (dm, 3 * dm)
            shapes[p + "qkv/b"] = (3 * dm,)
            shapes[p + "proj/w"] = (dm, dm)
            shapes[p + "proj/b"] = (dm,)
        else:
            shapes[p + "mix/local_w"] = (dm, dm)
            shapes[p + "mix/global_w"] = (dm, dm)
            shapes[p + "mix/b"] = (dm,)
        shapes[p + "mlp/w1"] = (dm, hidden)
        shapes[p + "mlp/b1"] = (hidden,)
        shapes[p + "mlp/w2"] = (hidden, dm)
        shapes[p + "mlp/b2"] = (dm,)
    shapes["final/mod/w"] = (c, 2 * dm)
    shapes["final/mod/b"] = (2 * dm,)
    shapes["out/w"] = (dm, D)
    shapes["out/b"] = (D,)
    return shapes


def param_count(arch: ArchDescriptor) -> int:
    return sum(math.prod(s) for s in param_shapes(arch).values())


def _is_modulation(name: str) -> bool:
    return name.endswith("mod/w") or name.endswith("mod/b")


@dataclass
class VelocityParams:
    arch: ArchDescriptor
    arrays: dict[str, ad.Tensor]
    task_codes: np.ndarray = field(repr=False, default=None)

    def numpy(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.arrays.items()}

    def copy(self) -> "VelocityParams":
        return VelocityParams(
            self.arch,
            {k: ad.Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in self.arrays.items()},
            self.task_codes.copy(),
        )


def init_params(arch: ArchDescriptor, seed: int) -> VelocityParams:
    """Seeded initialization; modulation projections start at exactly zero."""
    if not isinstance(arch, ArchDescriptor):
        raise ContractError("init_params needs an ArchDescriptor")
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in param_shapes(arch).items():
        if _is_modulation(name) or name.endswith("/b") or name.endswith("/b1") or name.endswith("/b2"):
            data = np.zeros(shape)
        elif name == "scale_table":
            data = rng.normal(0.0, 0.02, size=shape)
        else:
            fan_in, fan_out = shape
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            data = rng.uniform(-limit, limit, size=shape)
        arrays[name] = ad.Tensor(data, requires_grad=True, name=name)
    codes = task_table(arch.num_tasks, arch.task_embed_dim, arch.task_embed, seed=seed)
    return VelocityParams(arch, arrays, codes.astype(ad.get_dtype()))


def _modulate(x: ad.Tensor, shift: ad.Tensor, scale: ad.Tensor) -> ad.Tensor:
    return ad.broadcast_add(ad.mul(x, ad.broadcast_add(scale, 1.0)), shift)


def _attention(x: ad.Tensor, p: dict, prefix: str, n_heads: int) -> ad.Tensor:
    B, P, dm = x.shape
    dh = dm // n_heads
    qkv = ad.affine(x, p[prefix + "qkv/w"], p[prefix + "qkv/b"])
    qkv = ad.transpose(ad.reshape(qkv, (B, P, 3, n_heads, dh)), (2, 0, 3, 1, 4))
    q, k, v = (ad.select(qkv, (i,)) for i in range(3))
    scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    out = ad.matmul(ad.softmax(scores), v)
    out = ad.reshape(ad.transpose(out, (0, 2, 1, 3)), (B, P, dm))
    return ad.affine(out, p[prefix + "proj/w"], p[prefix + "proj/b"])


def _pool_mixer(x: ad.Tensor, p: dict, prefix: str) -> ad.Tensor:
    # token mixing through the grid-wide mean, so any grid size works
    pooled = ad.affine(ad.mean(x, axis=1, keepdims=True), p[prefix + "mix/global_w"], p[prefix + "mix/b"])
    return ad.broadcast_add(ad.affine(x, p[prefix + "mix/local_w"]), pooled)


def conditioning(params: VelocityParams, tau, level: int, spec: TaskSpec, batch: int,
                 extra: np.ndarray | None = None) -> ad.Tensor:
    """Fused conditioning vector ``MLP(step ⊕ scale ⊕ task [⊕ extra])``, shape ``[B, cond_dim]``."""
    arch, p = params.arch, params.arrays
    dtype = ad.get_dtype()
    tau = np.broadcast_to(np.asarray(tau, dtype=np.float64), (batch,))
    step = ad.Tensor(step_embed(tau, arch.d_model).astype(dtype))
    scale = ad.broadcast_add(ad.Tensor(np.zeros((batch, arch.d_model), dtype=dtype)),
                             scale_embed(p["scale_table"], level))
    task = ad.Tensor(np.broadcast_to(params.task_codes[spec.task_id], (batch, arch.task_embed_dim)))
    parts = [step, scale, task]
    if arch.extra_cond_dim:
        if extra is None or extra.shape != (batch, arch.extra_cond_dim):
            raise ContractError(f"extra conditioning of shape ({batch}, {arch.extra_cond_dim}) required")
        parts.append(ad.Tensor(extra))
    elif extra is not None:
        raise ContractError("architecture takes no extra conditioning")
    h = ad.gelu(ad.affine(ad.concat(parts), p["cond/w1"], p["cond/b1"]))
    return ad.affine(h, p["cond/w2"], p["cond/b2"])


def forward(params: VelocityParams, r: ad.Tensor, tau, level: int, spec: TaskSpec,
            extra: np.ndarray | None = None) -> ad.Tensor:
    """Differentiable velocity prediction for tokens ``r`` of shape ``[B, P, D]``.

    ``tau`` is a scalar or per-sample array of normalized times in [0, 1].
    """
    arch, p = params.arch, params.arrays
    if r.ndim != 3 or r.shape[-1] != arch.data_dim:
        raise ContractError(f"expected tokens [B, P, {arch.data_dim}], got {r.shape}")
    if not 0 <= level < arch.num_levels:
        raise ContractError(f"level {level} outside [0, {arch.num_levels})")
    if spec.num_tasks != arch.num_tasks or spec.embed_dim != arch.task_embed_dim:
        raise ContractError(
            f"task spec (T={spec.num_tasks}, d={spec.embed_dim}) does not match architecture "
            f"(T={arch.num_tasks}, d={arch.task_embed_dim})")
    B = r.shape[0]
    dm = arch.d_model
    cond = ad.gelu(conditioning(params, tau, level, spec, B, extra))
    h = ad.affine(r, p["in/w"], p["in/b"])
    for i in range(arch.n_blocks):
        prefix = f"blocks/{i}/"
        mod = ad.reshape(ad.affine(cond, p[prefix + "mod/w"], p[prefix + "mod/b"]), (B, 1, 6 * dm))
        shift1, scale1, gate1, shift2, scale2, gate2 = (
            ad.select(mod, (Ellipsis, slice(j * dm, (j + 1) * dm))) for j in range(6))
        x = _modulate(ad.layer_norm(h), shift1, scale1)
        if arch.mixing == "attention":
            x = _attention(x, p, prefix, arch.n_heads)
        else:
            x = _pool_mixer(x, p, prefix)
        h = ad.add(h, ad.mul(gate1, x))
        x = _modulate(ad.layer_norm(h), shift2, scale2)
        x = ad.gelu(ad.affine(x, p[prefix + "mlp/w1"], p[prefix + "mlp/b1"]))
        x = ad.affine(x, p[prefix + "mlp/w2"], p[prefix + "mlp/b2"])
        h = ad.add(h, ad.mul(gate2, x))
    mod = ad.reshape(ad.affine(cond, p["final/mod/w"], p["final/mod/b"]), (B, 1, 2 * dm))
    shift = ad.select(mod, (Ellipsis, slice(0, dm)))
    scale = ad.select(mod, (Ellipsis, slice(dm, 2 * dm)))
    h = _modulate(ad.layer_norm(h), shift, scale)
    return ad.affine(h, p["out/w"], p["out/b"])


class VelocityField:
    """Tape-free callable ``field(r, tau, level, spec, extra=None) -> ndarray``."""

    def __init__(self, params: VelocityParams):
        self.params = params

    def __call__(self, r: np.ndarray, tau, level: int, spec: TaskSpec,
                 extra: np.ndarray | None = None) -> np.ndarray:
        r = np.asarray(r, dtype=ad.get_dtype())
        return forward(self.params, ad.Tensor._wrap(r, False), tau, level, spec, extra).data


def predict_velocity(params: VelocityParams, r: RepBatch, tau: float, level: int,
                     spec: TaskSpec) -> RepBatch:
    """Velocity for a token batch at normalized time ``tau`` and scale ``level``."""
    if r.shape[-1] != params.arch.data_dim:
        raise ContractError(f"channel count {r.shape[-1]} != configured {params.arch.data_dim}")
    return RepBatch(VelocityField(params)(r.data, tau, level, spec), level)
