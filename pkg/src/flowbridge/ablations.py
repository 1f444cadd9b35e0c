"""Training harnesses for baselines and ablation suites.

Every suite trains its variants with the same :class:`FlowConfig` and the
same seed, so rows differ only in the factor under study.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError
from .flow import FlowConfig, TaskData, TrainResult, flow_loss, train
from .tasks import (DirectModel, PRESETS, SyntheticWorld, WorldDims, eval_fine_tuned, eval_zero_shot,
                    generate_world, primary_metric)
from .velocity import ArchDescriptor, VelocityParams, init_params

log = logging.getLogger(__name__)

SUITES = ("flow_steps", "capacity", "osd", "noise_anchor", "task_embed")
ROW_FIELDS = ("suite", "variant", "task", "steps", "metric_name", "metric_value", "train_loss", "k0_loss")
FLOW_STEPS = (1, 2, 10)
CAPACITY_TASKS = {"small": "classify_mlp_small", "base": "classify_mlp_base", "huge": "classify_mlp_huge"}


def make_arch(world: SyntheticWorld, base: ArchDescriptor | None = None, **overrides) -> ArchDescriptor:
    """Fit an architecture's data-facing fields to ``world``."""
    base = base or ArchDescriptor()
    return replace(base, data_dim=world.dims.channels, level_factors=world.level_factors,
                   num_tasks=len(world.tasks), task_embed_dim=world.dims.task_embed_dim, **overrides)


def build_dataset(world: SyntheticWorld, names: Sequence[str] | None = None, split: str = "train",
                  anchor: str = "tokens") -> list[TaskData]:
    names = [t.name for t in world.tasks] if names is None else list(names)
    extra = world.pooled_source(split).astype(np.float32) if anchor == "noise" else None
    return [TaskData(world.spec(n), world.source_levels(n, split), world.targets(n, split),
                     extra=extra, anchor=anchor) for n in names]


def check_compatible(arch: ArchDescriptor, world: SyntheticWorld) -> None:
    want = make_arch(world, arch, extra_cond_dim=arch.extra_cond_dim)
    if want != arch:
        raise ContractError(f"architecture {arch.to_dict()} does not fit the world (expected {want.to_dict()})")


def fit(world: SyntheticWorld, arch: ArchDescriptor, cfg: FlowConfig, names: Sequence[str] | None = None,
        anchor: str = "tokens", **train_kw) -> TrainResult:
    """Initialize from ``cfg.seed`` and train on ``names`` (default: every task)."""
    if anchor == "noise" and arch.extra_cond_dim != world.dims.channels:
        raise ContractError("noise anchoring needs extra_cond_dim equal to the channel count")
    check_compatible(arch, world)
    params = init_params(arch, cfg.seed)
    return train(build_dataset(world, names, anchor=anchor), params, cfg, **train_kw)


def final_loss(result: TrainResult) -> float:
    rows = [r for r in result.history if r["split"] == "train"]
    if not rows:
        return float("nan")
    last = max(r["epoch"] for r in rows)
    per_task = {r["task_id"]: r["loss"] for r in rows if r["epoch"] == last}
    return float(np.mean(list(per_task.values())))


def _row(suite, variant, task, steps, metric_name, value, train_loss=float("nan"), k0_loss=float("nan")):
    return {"suite": suite, "variant": variant, "task": task, "steps": steps, "metric_name": metric_name,
            "metric_value": float(value), "train_loss": float(train_loss), "k0_loss": float(k0_loss)}


# -- baselines --------------------------------------------------------------

@dataclass
class BaselineRun:
    row: dict
    model: object
    result: TrainResult


def flow_run(world: SyntheticWorld, task: str, arch: ArchDescriptor, cfg: FlowConfig,
             suite: str = "osd") -> BaselineRun:
    res = fit(world, arch, replace(cfg, objective="flow"), [task])
    metric = primary_metric(world, task)
    value = eval_zero_shot(res.params, world, task, cfg.N)[metric]
    return BaselineRun(_row(suite, "flow", task, cfg.N, metric, value, final_loss(res)), res.params, res)


def osd_baseline(world: SyntheticWorld, task: str, arch: ArchDescriptor, cfg: FlowConfig) -> BaselineRun:
    """Same network, budget and seed, trained to output ``r_t`` from ``r0`` in one pass."""
    res = fit(world, arch, replace(cfg, objective="direct"), [task])
    model = DirectModel(res.params)
    metric = primary_metric(world, task)
    value = eval_zero_shot(model, world, task, cfg.N)[metric]
    return BaselineRun(_row("osd", "osd", task, 1, metric, value, final_loss(res)), model, res)


def noise_anchor_baseline(world: SyntheticWorld, task: str, arch: ArchDescriptor,
                          cfg: FlowConfig) -> BaselineRun:
    """Flow from unit Gaussian noise, with the pooled source token as extra conditioning."""
    arch = replace(arch, extra_cond_dim=world.dims.channels)
    res = fit(world, arch, replace(cfg, objective="flow"), [task], anchor="noise")
    metric = primary_metric(world, task)
    value = eval_zero_shot(res.params, world, task, cfg.N)[metric]
    return BaselineRun(_row("noise_anchor", "noise_anchor", task, cfg.N, metric, value, final_loss(res)),
                       res.params, res)


# -- task embedding conflict ------------------------------------------------

def k0_loss(params: VelocityParams, world: SyntheticWorld, names: Sequence[str], split: str = "val") -> float:
    """Flow loss at ``k = 0`` averaged over ``names``.

    At ``k = 0`` every task sees the same input state, so tasks the field
    cannot tell apart must share one prediction there.
    """
    losses = []
    for name in names:
        src, tgt = world.source_levels(name, split), world.targets(name, split)
        k = np.zeros(src.batch_size, dtype=np.int64)
        loss, _ = flow_loss(params, src, tgt, k, 1, world.spec(name))
        losses.append(float(loss.data))
    return float(np.mean(losses))


def conflict_floor(world: SyntheticWorld, names: Sequence[str], split: str = "val") -> float:
    """Lowest ``k = 0`` loss reachable when two tasks share a prediction.

    For velocities ``v0, v1`` at one state the best common prediction is
    their mean, leaving ``mean(((v0 - v1) / 2) ** 2)`` per task.
    """
    if len(names) != 2:
        raise ContractError("the conflict floor is defined for exactly two tasks")
    a, b = (world.targets(n, split) for n in names)
    sq = sum(float((((x.data.astype(np.float64) - y.data) / 2) ** 2).sum()) for x, y in zip(a, b))
    return sq / sum(x.data.size for x in a)


def task_embed_ablation(world: SyntheticWorld, cfg: FlowConfig, arch: ArchDescriptor | None = None,
                        variants: Sequence[str] = ("circular", "random", "constant")) -> list[dict]:
    """One shared field per embedding variant; one row per variant."""
    if len(world.tasks) < 2:
        raise ContractError("task embedding ablation needs at least two tasks")
    names = [t.name for t in world.tasks]
    rows = []
    for variant in variants:
        a = make_arch(world, arch, task_embed=variant)
        res = fit(world, a, replace(cfg, objective="flow"))
        scores = [eval_zero_shot(res.params, world, n, cfg.N)[primary_metric(world, n)] for n in names]
        metric = primary_metric(world, names[0])
        rows.append(_row("task_embed", variant, "+".join(names), cfg.N, f"mean_{metric}", np.mean(scores),
                         final_loss(res), k0_loss(res.params, world, names)))
    return rows


# -- suites -----------------------------------------------------------------

def suite_world(suite: str, seed: int, dims: WorldDims, task: str | None = None) -> SyntheticWorld:
    if suite == "task_embed":
        base = task or "classify_affine"
        mirror = replace(PRESETS[base], name=f"{base}_neg", mirror_of=base)
        return generate_world(seed, dims, [PRESETS[base], mirror])
    if suite == "capacity":
        return generate_world(seed, dims, [PRESETS[n] for n in CAPACITY_TASKS.values()])
    default = "classify_mlp" if suite == "flow_steps" else "classify_affine"
    return generate_world(seed, dims, [task or default])


def run_suite(suite: str, world: SyntheticWorld, cfg: FlowConfig, arch: ArchDescriptor | None = None,
              task: str | None = None, decoder_epochs: int = 200,
              progress: Callable[[dict], None] | None = None) -> list[dict]:
    """Train and evaluate every variant of ``suite``; returns rows in ``ROW_FIELDS`` order."""
    if suite not in SUITES:
        raise ContractError(f"unknown suite {suite!r}; valid suites: {', '.join(SUITES)}")
    rows: list[dict] = []

    def emit(row):
        rows.append(row)
        if progress is not None:
            progress(row)

    if suite == "task_embed":
        for row in task_embed_ablation(world, cfg, arch):
            emit(row)
        return rows
    if suite == "capacity":
        for scale, name in CAPACITY_TASKS.items():
            sub = world if len(world.tasks) == 1 else _only(world, name)
            a = make_arch(sub, arch)
            run = flow_run(sub, name, a, cfg, suite="capacity")
            emit({**run.row, "variant": f"{scale}/flow_zero_shot"})
            ft = eval_fine_tuned(run.model, sub, name, cfg.N, decoder_epochs)[run.row["metric_name"]]
            emit({**run.row, "variant": f"{scale}/flow_fine_tuned", "metric_value": float(ft)})
            osd = osd_baseline(sub, name, a, cfg)
            emit({**osd.row, "suite": "capacity", "variant": f"{scale}/osd"})
        return rows
    task = task or world.tasks[0].name
    a = make_arch(world, arch)
    if suite == "flow_steps":
        res = fit(world, a, replace(cfg, objective="flow"), [task])
        metric = primary_metric(world, task)
        for n in FLOW_STEPS:
            value = eval_zero_shot(res.params, world, task, n)[metric]
            emit(_row("flow_steps", f"N={n}", task, n, metric, value, final_loss(res)))
        return rows
    flow = flow_run(world, task, a, cfg, suite=suite)
    emit({**flow.row, "variant": "token_anchor" if suite == "noise_anchor" else "flow"})
    other = osd_baseline(world, task, a, cfg) if suite == "osd" else noise_anchor_baseline(world, task, a, cfg)
    emit(other.row)
    return rows


def _only(world: SyntheticWorld, name: str) -> SyntheticWorld:
    from .tasks import with_tasks
    return with_tasks(world, [name])
