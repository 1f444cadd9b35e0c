"""Flat ``key=value`` run configuration shared by every subcommand."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ContractError
from .flow import FlowConfig
from .tasks import WorldDims
from .velocity import ArchDescriptor


class ConfigError(ContractError):
    """Unknown key, unparsable value or invalid combination in a run config."""


@dataclass
class RunConfig:
    """Everything a run depends on. Defaults are the desk-scale setup.

    Flow and optimizer: ``K`` interpolation levels, ``N`` Euler steps,
    ``epochs``, ``lr`` (peak AdamW rate), ``weight_decay``, ``batch_size``,
    ``seed`` (init, shuffling and k sampling), ``k_inclusive`` (draw k up to
    K), ``per_task_training`` (task after task instead of round-robin),
    ``warmup_steps``, ``min_lr_ratio``, ``schedule_epochs`` (cosine horizon,
    0 = ``epochs``) and ``objective`` (``flow`` or ``direct`` for OSD).

    Architecture: ``n_blocks``, ``d_model``, ``mixing`` (``attention`` or
    ``mlp_mixer``), ``n_heads``, ``cond_dim``, ``mlp_ratio``.

    World: ``world_seed``, ``input_dim``, ``channels``, ``grid_side``,
    ``n_train``, ``n_val``, ``task_embed_dim``, and ``tasks`` (comma
    separated preset names).

    Modes: ``noise_anchor``, ``embed_variant`` (``circular``, ``random``,
    ``constant``), ``pooled_similarity`` (pool tokens before cosine/std).

    Evaluation and output: ``eval_every`` (epochs between validation
    passes, the last epoch is always evaluated; 0 = last only),
    ``decoder_epochs`` and ``decoder_lr`` for fine-tuned heads, ``out``.
    """

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
    schedule_epochs: int = 0
    objective: str = "flow"

    n_blocks: int = 4
    d_model: int = 64
    mixing: str = "attention"
    n_heads: int = 4
    cond_dim: int = 64
    mlp_ratio: int = 4

    world_seed: int = 0
    input_dim: int = 64
    channels: int = 32
    grid_side: int = 4
    n_train: int = 2000
    n_val: int = 500
    task_embed_dim: int = 16
    tasks: str = "classify_affine"

    noise_anchor: bool = False
    embed_variant: str = "circular"
    pooled_similarity: bool = False

    eval_every: int = 5
    decoder_epochs: int = 200
    decoder_lr: float = 1e-2
    out: str = "runs/default"

    def __post_init__(self):
        if self.eval_every < 0 or self.decoder_epochs < 0:
            raise ConfigError("eval_every and decoder_epochs must be non-negative")
        if not self.task_names:
            raise ConfigError("tasks must name at least one task")
        try:
            self.flow_config()
            self.world_dims()
            ArchDescriptor(n_blocks=self.n_blocks, d_model=self.d_model, mixing=self.mixing,
                           n_heads=self.n_heads, cond_dim=self.cond_dim, mlp_ratio=self.mlp_ratio,
                           task_embed=self.embed_variant)
        except ConfigError:
            raise
        except ContractError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def task_names(self) -> list[str]:
        return [t.strip() for t in self.tasks.split(",") if t.strip()]

    def flow_config(self) -> FlowConfig:
        names = {f.name for f in fields(FlowConfig)}
        return FlowConfig(**{k: v for k, v in self.to_dict().items() if k in names})

    def world_dims(self) -> WorldDims:
        names = {f.name for f in fields(WorldDims)}
        return WorldDims(**{k: v for k, v in self.to_dict().items() if k in names})

    def base_arch(self) -> ArchDescriptor:
        """Architecture fields owned by the config; data-facing ones come from the world."""
        return ArchDescriptor(n_blocks=self.n_blocks, d_model=self.d_model, mixing=self.mixing,
                              n_heads=self.n_heads, cond_dim=self.cond_dim, mlp_ratio=self.mlp_ratio,
                              task_embed=self.embed_variant)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return "".join(f"{k}={_render(v)}\n" for k, v in self.to_dict().items())

    def with_overrides(self, overrides: dict[str, str]) -> "RunConfig":
        return from_mapping({**{k: _render(v) for k, v in self.to_dict().items()}, **overrides})


def _render(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(key: str, raw: str, typ: str):
    raw = raw.strip()
    try:
        if typ == "bool":
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ}") from None
    return raw


def from_mapping(values: dict[str, str]) -> RunConfig:
    known = {f.name: f.type for f in fields(RunConfig)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    return RunConfig(**{k: _coerce(k, v, known[k]) for k, v in values.items()})


def parse_lines(text: str, source: str = "<config>") -> dict[str, str]:
    """Read ``key=value`` lines; blank lines and ``#`` comments are skipped."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config(path: str | Path | None = None, overrides: dict[str, str] | None = None) -> RunConfig:
    values = parse_lines(Path(path).read_text(), str(path)) if path else {}
    return from_mapping({**values, **(overrides or {})})
