"""Synthetic multi-task world: frozen source encoder, task teachers and heads.

A latent input ``x`` is mapped by a frozen random affine "foundation"
encoder to a token grid ``r0``. Every task owns a frozen target encoder
(applied per token to ``r0``) and a frozen decoder; labels and reference
outputs are *defined* by decoder(encoder(x)), so perfect transport of
``r0`` to the task representation reproduces the teacher exactly.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np

from . import serialization
from .embeddings import DecoderKind, TaskSpec
from .errors import ContractError, FormatError
from .flow import ConstantField, avg_pool_tokens, euler_integrate, multiscale_sample
from .optim import AdamState, adamw_step
from .tokens import MultiScaleTokens, RepBatch
from .velocity import VelocityField, VelocityParams

ENCODER_KINDS = ("affine", "orthogonal", "mlp_nonlinear", "multiscale_pyramid")
PROTOCOLS = {
    DecoderKind.CLASSIFY: "probe_accuracy",
    DecoderKind.DENSE_REGRESS: "per_token_mse",
    DecoderKind.RETRIEVE: "recall_at_k",
}
RECALL_KS = (1, 5, 10)


@dataclass(frozen=True)
class TaskInstance:
    name: str
    encoder_kind: str = "affine"
    decoder_kind: str = "classify"
    level_factors: tuple[int, ...] = (1,)
    n_classes: int = 64
    teacher_depth: int = 2
    teacher_width: int = 64
    pair_noise: float = 0.3
    pair_perturb: float = 0.1
    # target is the negation of another task's target
    mirror_of: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "level_factors", tuple(int(f) for f in self.level_factors))
        if self.encoder_kind not in ENCODER_KINDS:
            raise ContractError(f"encoder_kind must be one of {ENCODER_KINDS}, got {self.encoder_kind!r}")
        DecoderKind(self.decoder_kind)
        if self.level_factors[0] != 1:
            raise ContractError("the finest level must have factor 1")
        if self.encoder_kind == "multiscale_pyramid" and len(self.level_factors) < 2:
            raise ContractError("multiscale_pyramid tasks need at least two level factors")
        if self.decoder_kind == "classify" and self.n_classes < 2:
            raise ContractError("classify tasks need at least two classes")

    @property
    def eval_protocol(self) -> str:
        return PROTOCOLS[DecoderKind(self.decoder_kind)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["level_factors"] = list(self.level_factors)
        return d


PRESETS: dict[str, TaskInstance] = {
    "classify_affine": TaskInstance("classify_affine", "affine", "classify"),
    "classify_orthogonal": TaskInstance("classify_orthogonal", "orthogonal", "classify"),
    "classify_mlp": TaskInstance("classify_mlp", "mlp_nonlinear", "classify"),
    "classify_affine_neg": TaskInstance("classify_affine_neg", "affine", "classify",
                                        mirror_of="classify_affine"),
    "dense_pyramid": TaskInstance("dense_pyramid", "multiscale_pyramid", "dense_regress",
                                  level_factors=(1, 2)),
    "retrieve": TaskInstance("retrieve", "affine", "retrieve"),
    "retrieve_identical": TaskInstance("retrieve_identical", "affine", "retrieve",
                                       pair_noise=0.0, pair_perturb=0.0),
    # teacher scales for the capacity sweep
    "classify_mlp_small": TaskInstance("classify_mlp_small", "mlp_nonlinear", "classify",
                                       teacher_depth=1, teacher_width=32),
    "classify_mlp_base": TaskInstance("classify_mlp_base", "mlp_nonlinear", "classify",
                                      teacher_depth=2, teacher_width=64),
    "classify_mlp_huge": TaskInstance("classify_mlp_huge", "mlp_nonlinear", "classify",
                                      teacher_depth=3, teacher_width=128),
}


def resolve_task(task: str | TaskInstance) -> TaskInstance:
    if isinstance(task, TaskInstance):
        return task
    try:
        return PRESETS[task]
    except KeyError:
        raise ContractError(f"unknown task {task!r}; presets: {sorted(PRESETS)}") from None


@dataclass(frozen=True)
class WorldDims:
    input_dim: int = 64
    channels: int = 32
    grid_side: int = 4
    n_train: int = 2000
    n_val: int = 500
    task_embed_dim: int = 16

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 1:
                raise ContractError(f"{k} must be positive, got {v}")
        if self.task_embed_dim % 2:
            raise ContractError("task_embed_dim must be even")
        if self.input_dim > self.grid_side ** 2 * self.channels:
            raise ContractError("input_dim exceeds token capacity; the source encoder would lose information")

    @property
    def num_tokens(self) -> int:
        return self.grid_side ** 2


# -- frozen maps ------------------------------------------------------------

def _gen(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng([seed, *tags])


def _f32(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float32)


def _task_arrays(task: TaskInstance, index: int, dims: WorldDims, seed: int) -> dict[str, np.ndarray]:
    rng = _gen(seed, 100 + index)
    D = dims.channels
    out: dict[str, np.ndarray] = {}
    kind = task.encoder_kind
    if task.mirror_of is not None:
        pass
    elif kind == "affine":
        out["enc/w"] = _rotation_map(rng, D, scale=(0.7, 1.4))
        out["enc/b"] = 0.5 * rng.standard_normal(D)
    elif kind == "orthogonal":
        out["enc/w"] = _rotation_map(rng, D)
        out["enc/b"] = 0.5 * rng.standard_normal(D)
    elif kind == "mlp_nonlinear":
        out["enc/skip"] = _rotation_map(rng, D)
        fan_in = D
        for i in range(task.teacher_depth):
            out[f"enc/w{i}"] = 1.5 * rng.standard_normal((fan_in, task.teacher_width)) / math.sqrt(fan_in)
            out[f"enc/b{i}"] = 0.2 * rng.standard_normal(task.teacher_width)
            fan_in = task.teacher_width
        # residual branch gain keeps the teacher injective
        out["enc/wo"] = 0.6 * rng.standard_normal((fan_in, D)) / math.sqrt(fan_in)
        out["enc/bo"] = 0.5 * rng.standard_normal(D)
    else:
        for lv in range(len(task.level_factors)):
            out[f"enc/w{lv}"] = _rotation_map(rng, D, scale=(0.7, 1.4))
            out[f"enc/b{lv}"] = 0.5 * rng.standard_normal(D)
    if task.decoder_kind == "retrieve":
        out["pair/w"] = np.eye(D) + task.pair_perturb * rng.standard_normal((D, D)) / math.sqrt(D)
        out["pair/noise/train"] = task.pair_noise * rng.standard_normal((dims.n_train, dims.input_dim))
        out["pair/noise/val"] = task.pair_noise * rng.standard_normal((dims.n_val, dims.input_dim))
    if task.decoder_kind == "classify":
        out["proto/inputs"] = rng.standard_normal((task.n_classes, dims.input_dim))
    return {k: _f32(v) for k, v in out.items()}


def _rotation_map(rng: np.random.Generator, D: int, scale: tuple[float, float] = (1.0, 1.0),
                  angle: tuple[float, float] = (math.pi / 3, 2 * math.pi / 3)) -> np.ndarray:
    """Random-plane rotations by angles in ``angle`` with per-plane gains in ``scale``.

    Rotating by roughly a right angle decorrelates source and target, while
    keeping every eigenvalue away from the negative real axis: the straight
    path ``(1 - tau) I + tau W`` stays nonsingular, so interpolation paths of
    distinct tokens never cross.
    """
    q, r = np.linalg.qr(rng.standard_normal((D, D)))
    q = q * np.sign(np.diag(r))
    block = np.eye(D)
    for j in range(D // 2):
        th = rng.uniform(*angle) * rng.choice([-1.0, 1.0])
        g = rng.uniform(*scale)
        c, s_ = g * math.cos(th), g * math.sin(th)
        block[2 * j:2 * j + 2, 2 * j:2 * j + 2] = [[c, s_], [-s_, c]]
    return q @ block @ q.T


@dataclass
class SyntheticWorld:
    """Frozen maps and inputs for a fixed set of tasks.

    Everything lives in ``arrays`` (float32), which is exactly what gets
    serialized; derived tokens and labels are recomputed on demand.
    """

    seed: int
    dims: WorldDims
    tasks: list[TaskInstance]
    arrays: dict[str, np.ndarray]
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    # -- lookup -------------------------------------------------------------
    def task(self, name: str) -> TaskInstance:
        for t in self.tasks:
            if t.name == name:
                return t
        raise ContractError(f"task {name!r} is not registered in this world")

    def task_index(self, name: str) -> int:
        return self.tasks.index(self.task(name))

    def spec(self, name: str) -> TaskSpec:
        t = self.task(name)
        return TaskSpec(self.task_index(name), len(self.tasks), self.dims.task_embed_dim, t.decoder_kind)

    @cached_property
    def level_factors(self) -> tuple[int, ...]:
        longest = max((t.level_factors for t in self.tasks), key=len)
        for t in self.tasks:
            if longest[:len(t.level_factors)] != t.level_factors:
                raise ContractError(f"level factors of {t.name} are not a prefix of {longest}")
        return longest

    def _enc(self, name: str) -> dict[str, np.ndarray]:
        prefix = f"task/{name}/"
        return {k[len(prefix):]: v for k, v in self.arrays.items() if k.startswith(prefix)}

    # -- encoders -----------------------------------------------------------
    def encode_source(self, x: np.ndarray) -> np.ndarray:
        d = self.dims
        flat = x.astype(np.float64) @ self.arrays["source/w"] + self.arrays["source/b"]
        return _f32(flat.reshape(len(x), d.num_tokens, d.channels))

    def encode_target(self, name: str, r0: np.ndarray) -> list[np.ndarray]:
        """Per-level targets from level-0 source tokens."""
        task = self.task(name)
        if task.mirror_of is not None:
            return [_f32(-t) for t in self.encode_target(task.mirror_of, r0)]
        p = self._enc(name)
        h = r0.astype(np.float64)
        if task.encoder_kind in ("affine", "orthogonal"):
            return [_f32(h @ p["enc/w"] + p["enc/b"])]
        if task.encoder_kind == "mlp_nonlinear":
            for i in range(task.teacher_depth):
                h = np.tanh(h @ p[f"enc/w{i}"] + p[f"enc/b{i}"])
            return [_f32(r0.astype(np.float64) @ p["enc/skip"] + h @ p["enc/wo"] + p["enc/bo"])]
        return [_f32(avg_pool_tokens(h, f) @ p[f"enc/w{lv}"] + p[f"enc/b{lv}"])
                for lv, f in enumerate(task.level_factors)]

    def inputs(self, split: str) -> np.ndarray:
        key = f"inputs/{split}"
        if key not in self.arrays:
            raise ContractError(f"unknown split {split!r}")
        return self.arrays[key]

    def source_tokens(self, split: str) -> RepBatch:
        key = ("src", split)
        if key not in self._cache:
            self._cache[key] = RepBatch(self.encode_source(self.inputs(split)))
        return self._cache[key]

    def source_levels(self, name: str, split: str) -> MultiScaleTokens:
        return multiscale_sample(self.source_tokens(split), self.task(name).level_factors)

    def targets(self, name: str, split: str) -> MultiScaleTokens:
        key = ("tgt", name, split)
        if key not in self._cache:
            levels = self.encode_target(name, self.source_tokens(split).data)
            self._cache[key] = MultiScaleTokens([RepBatch(t, i) for i, t in enumerate(levels)])
        return self._cache[key]

    def pooled_source(self, split: str) -> np.ndarray:
        return self.source_tokens(split).data.mean(axis=1)

    # -- decoders -----------------------------------------------------------
    def frozen_decoder(self, name: str) -> dict[str, np.ndarray]:
        task = self.task(name)
        D = self.dims.channels
        if task.decoder_kind == "classify":
            key = ("dec", name)
            if key not in self._cache:
                protos_r0 = self.encode_source(self._enc(name)["proto/inputs"])
                protos = self.encode_target(name, protos_r0)[0].astype(np.float64).mean(axis=1)
                self._cache[key] = {"w": _f32(protos.T), "b": _f32(-0.5 * (protos ** 2).sum(axis=1))}
            return self._cache[key]
        return {"w": np.eye(D, dtype=np.float32), "b": np.zeros(D, dtype=np.float32)}

    def decode(self, name: str, tokens: MultiScaleTokens, decoder: dict | None = None):
        """Apply a task head: class ids, per-level token maps, or unit embeddings.

        A decoder may carry an ``adapter/w``, ``adapter/b`` pair, applied to
        the features before the readout.
        """
        task = self.task(name)
        dec = decoder or self.frozen_decoder(name)
        w, b = dec["w"].astype(np.float64), dec["b"].astype(np.float64)

        def head(z):
            if "adapter/w" in dec:
                z = z @ dec["adapter/w"].astype(np.float64) + dec["adapter/b"].astype(np.float64)
            return z @ w + b

        if task.decoder_kind == "dense_regress":
            return [head(lv.data.astype(np.float64)) for lv in tokens]
        z = head(tokens[0].data.astype(np.float64).mean(axis=1))
        return z.argmax(axis=1) if task.decoder_kind == "classify" else _unit(z)

    def labels(self, name: str, split: str) -> np.ndarray:
        if self.task(name).decoder_kind != "classify":
            raise ContractError(f"task {name!r} has no labels")
        return self.decode(name, self.targets(name, split))

    def paired_embeddings(self, name: str, split: str) -> np.ndarray:
        """The retrieval gallery: a second encoder applied to a noisy copy of the input."""
        p = self._enc(name)
        x = self.inputs(split) + p[f"pair/noise/{split}"]
        rt = self.encode_target(name, self.encode_source(x))[0].astype(np.float64)
        return _unit(rt.mean(axis=1) @ p["pair/w"])

    # -- persistence --------------------------------------------------------
    def metadata(self) -> dict:
        return {"kind": "world", "seed": self.seed, "dims": asdict(self.dims),
                "tasks": [t.to_dict() for t in self.tasks]}

    def save(self, path) -> None:
        serialization.save(path, self.metadata(), self.arrays)

    @classmethod
    def load(cls, path) -> "SyntheticWorld":
        meta, arrays = serialization.load(path)
        if meta.get("kind") != "world":
            raise FormatError(f"{path} is not a world file (kind={meta.get('kind')!r})")
        tasks = [TaskInstance(**{**t, "level_factors": tuple(t["level_factors"])}) for t in meta["tasks"]]
        return cls(meta["seed"], WorldDims(**meta["dims"]), tasks, arrays)


def _unit(z: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(z, axis=1, keepdims=True)
    return z / np.maximum(norm, 1e-12)


def _source_weights(rng: np.random.Generator, dims: WorldDims) -> np.ndarray:
    # half of every token's variance comes from a map shared by all tokens,
    # so pooled tokens keep a global summary of the input
    P, D, n = dims.num_tokens, dims.channels, dims.input_dim
    shared = rng.standard_normal((n, 1, D))
    local = rng.standard_normal((n, P, D))
    return ((shared + local) / math.sqrt(2 * n)).reshape(n, P * D)


def generate_world(seed: int, dims: WorldDims, tasks) -> SyntheticWorld:
    """Build a world deterministically from ``seed``.

    Train and validation inputs are separate draws, so the splits are
    index-disjoint.
    """
    tasks = [resolve_task(t) for t in tasks]
    if not tasks:
        raise ContractError("a world needs at least one task")
    names = [t.name for t in tasks]
    if len(set(names)) != len(names):
        raise ContractError(f"duplicate task names in {names}")
    for t in tasks:
        if t.mirror_of is not None and t.mirror_of not in names:
            raise ContractError(f"{t.name} mirrors {t.mirror_of!r}, which is not in the world")
    P, D = dims.num_tokens, dims.channels
    for t in tasks:
        for f in t.level_factors:
            if dims.grid_side % f:
                raise ContractError(f"{t.name}: factor {f} does not divide grid side {dims.grid_side}")
    rng = _gen(seed, 1)
    arrays = {
        "inputs/train": _f32(rng.standard_normal((dims.n_train, dims.input_dim))),
        "inputs/val": _f32(rng.standard_normal((dims.n_val, dims.input_dim))),
        "source/w": _f32(_source_weights(rng, dims)),
        "source/b": _f32(0.1 * rng.standard_normal(P * D)),
    }
    for i, t in enumerate(tasks):
        for k, v in _task_arrays(t, i, dims, seed).items():
            arrays[f"task/{t.name}/{k}"] = v
    return SyntheticWorld(seed, dims, tasks, arrays)


# -- models and transport ---------------------------------------------------

class Oracle:
    """Stand-in model whose field is the exact straight-line velocity."""

    def __repr__(self) -> str:
        return "Oracle()"


ORACLE = Oracle()


@dataclass
class DirectModel:
    """One-step regressor: the network output *is* the prediction."""

    params: VelocityParams


EVAL_CHUNK = 250


def noise_start(world: SyntheticWorld, name: str, split: str, like: MultiScaleTokens) -> MultiScaleTokens:
    rng = _gen(world.seed, 900 + world.task_index(name), 0 if split == "train" else 1)
    return MultiScaleTokens([RepBatch(_f32(rng.standard_normal(lv.shape)), lv.level) for lv in like])


def transport(model, world: SyntheticWorld, name: str, split: str, N: int,
              trajectory: list | None = None) -> MultiScaleTokens:
    """Push the split's source tokens through ``model`` for task ``name``.

    ``model`` is trained :class:`VelocityParams` (noise-anchored when its
    architecture takes extra conditioning), a :class:`DirectModel`, the
    :data:`ORACLE`, or any callable field. When ``trajectory`` is a list the
    level-0 state after every Euler step (initial state included) is
    appended to it, concatenated over chunks.
    """
    from .flow import euler_path

    spec = world.spec(name)
    source = world.source_levels(name, split)
    extra_all = None
    if isinstance(model, VelocityParams) and model.arch.extra_cond_dim:
        source = noise_start(world, name, split, source)
        extra_all = _f32(world.pooled_source(split))
    n = source.batch_size
    outputs = []
    paths: list[list[np.ndarray]] = []
    for lo in range(0, n, EVAL_CHUNK):
        idx = np.arange(lo, min(n, lo + EVAL_CHUNK))
        chunk = source.take(idx)
        extra = None if extra_all is None else extra_all[idx]
        if isinstance(model, DirectModel):
            fieldfn = VelocityField(model.params)
            outputs.append([fieldfn(lv.data, 0.0, lv.level, spec) for lv in chunk])
            continue
        if isinstance(model, Oracle):
            target = world.targets(name, split).take(idx)
            fieldfn = ConstantField([t.data - s.data for s, t in zip(chunk, target)])
        else:
            fieldfn = model
        states = []
        for state in euler_path(fieldfn, chunk, spec, N, extra):
            states.append(state[0].data)
        outputs.append([lv.data for lv in state])
        paths.append(states)
    if trajectory is not None and paths:
        for step in range(len(paths[0])):
            trajectory.append(np.concatenate([p[step] for p in paths]))
    levels = [np.concatenate([o[lv] for o in outputs]) for lv in range(len(source))]
    return MultiScaleTokens([RepBatch(d, i) for i, d in enumerate(levels)])


# -- metrics ----------------------------------------------------------------

def recall_at_k(queries: np.ndarray, gallery: np.ndarray, ks=RECALL_KS) -> dict[str, float]:
    """Percent of queries whose paired gallery item ranks within the top k by cosine."""
    sims = _unit(queries) @ _unit(gallery).T
    true = np.diag(sims)
    rank = (sims > true[:, None]).sum(axis=1)
    return {f"R@{k}": 100.0 * float(np.mean(rank < k)) for k in ks}


def task_metrics(world: SyntheticWorld, name: str, tokens: MultiScaleTokens, split: str,
                 decoder: dict | None = None) -> dict[str, float]:
    task = world.task(name)
    if task.decoder_kind == "classify":
        pred = world.decode(name, tokens, decoder)
        return {"accuracy": 100.0 * float(np.mean(pred == world.labels(name, split)))}
    if task.decoder_kind == "dense_regress":
        pred = world.decode(name, tokens, decoder)
        ref = world.decode(name, world.targets(name, split))
        out = {}
        sq, count = 0.0, 0
        for lv, (p, r) in enumerate(zip(pred, ref)):
            err = ((p - r) ** 2)
            out[f"level{lv}_mse"] = float(err.mean())
            sq += float(err.sum())
            count += err.size
        return {"per_token_mse": sq / count, **out}
    q = world.decode(name, tokens, decoder)
    g = world.paired_embeddings(name, split)
    i2t = recall_at_k(q, g)
    t2i = recall_at_k(g, q)
    return {**{f"i2t_{k}": v for k, v in i2t.items()}, **{f"t2i_{k}": v for k, v in t2i.items()}}


def primary_metric(world: SyntheticWorld, name: str) -> str:
    kind = world.task(name).decoder_kind
    return {"classify": "accuracy", "dense_regress": "per_token_mse", "retrieve": "i2t_R@1"}[kind]


def teacher_metrics(world: SyntheticWorld, name: str, split: str = "val") -> dict[str, float]:
    return task_metrics(world, name, world.targets(name, split), split)


def eval_zero_shot(model, world: SyntheticWorld, name: str, N: int, split: str = "val") -> dict[str, float]:
    """Transport, decode with the frozen head, score against the teacher."""
    return task_metrics(world, name, transport(model, world, name, split, N), split)


# -- decoder fine-tuning ----------------------------------------------------

def _flat_features(name: str, world: SyntheticWorld, tokens: MultiScaleTokens) -> np.ndarray:
    # the representation the readout consumes: pooled level 0, or every token
    if world.task(name).decoder_kind == "dense_regress":
        return np.concatenate([lv.data.reshape(-1, lv.shape[-1]) for lv in tokens]).astype(np.float64)
    return tokens[0].data.astype(np.float64).mean(axis=1)


def finetune_decoder(world: SyntheticWorld, name: str, features: MultiScaleTokens | None,
                     epochs: int, lr: float = 1e-2, weight_decay: float = 0.0) -> dict[str, np.ndarray]:
    """Fit a fresh affine adapter in front of the frozen readout.

    The adapter starts at the identity, so zero epochs reproduce the frozen
    head exactly. It is trained full-batch with AdamW to map the flow
    outputs of the train split onto the teacher representation.
    """
    frozen = world.frozen_decoder(name)
    D = world.dims.channels
    params = {"adapter/w": np.eye(D), "adapter/b": np.zeros(D)}
    if epochs > 0:
        if features is None:
            raise ContractError("fine-tuning needs train-split features")
        z = _flat_features(name, world, features)
        target = _flat_features(name, world, world.targets(name, "train"))
        if z.shape != target.shape:
            raise ContractError(f"features {z.shape} do not match the train split {target.shape}")
        state = AdamState()
        for _ in range(epochs):
            g = 2.0 * (z @ params["adapter/w"] + params["adapter/b"] - target) / z.size
            adamw_step(params, {"adapter/w": z.T @ g, "adapter/b": g.sum(axis=0)}, lr, weight_decay, state)
    return {**{k: _f32(v) for k, v in params.items()}, **frozen}


def eval_fine_tuned(model, world: SyntheticWorld, name: str, N: int, decoder_epochs: int = 200,
                    lr: float = 1e-2) -> dict[str, float]:
    """Refit only the head on flow outputs of the train split, score on val."""
    train_feats = transport(model, world, name, "train", N) if decoder_epochs > 0 else None
    decoder = finetune_decoder(world, name, train_feats, decoder_epochs, lr)
    return task_metrics(world, name, transport(model, world, name, "val", N), "val", decoder)


def chance_level(labels: np.ndarray, predictions: np.ndarray, n_classes: int) -> tuple[float, float]:
    """Expected agreement and its binomial std if predictions ignored the labels."""
    pl = np.bincount(labels, minlength=n_classes) / len(labels)
    pp = np.bincount(predictions, minlength=n_classes) / len(predictions)
    p = float(pl @ pp)
    return p, math.sqrt(p * (1 - p) / len(labels))


def with_tasks(world: SyntheticWorld, names) -> SyntheticWorld:
    """A view of ``world`` restricted to ``names`` (re-indexed task ids, shared arrays)."""
    tasks = [world.task(n) for n in names]
    keep = {f"task/{t.name}/" for t in tasks}
    arrays = {k: v for k, v in world.arrays.items()
              if not k.startswith("task/") or any(k.startswith(p) for p in keep)}
    return SyntheticWorld(world.seed, world.dims, tasks, arrays)


__all__ = [
    "TaskInstance", "PRESETS", "WorldDims", "SyntheticWorld", "generate_world", "ORACLE",
    "DirectModel", "transport", "noise_start", "eval_zero_shot", "eval_fine_tuned", "finetune_decoder",
    "task_metrics", "teacher_metrics", "recall_at_k", "chance_level", "primary_metric",
    "resolve_task", "with_tasks",
]
