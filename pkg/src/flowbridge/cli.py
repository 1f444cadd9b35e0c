"""Command line entry point: ``flowbridge {gen-world,train,eval,ablate,analyze}``.

Exit codes: 0 success, 2 configuration error, 3 numeric abort, 4 I/O or
file format error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import ablations, analytics
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_config
from .errors import ContractError, FormatError, NumericError
from .flow import flow_loss, train
from .tasks import (DirectModel, SyntheticWorld, eval_fine_tuned, eval_zero_shot, generate_world, noise_start,
                    transport)
from .velocity import init_params

log = logging.getLogger("flowbridge")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
METRIC_FIELDS = ("epoch", "task_id", "split", "loss", "metric_name", "metric_value")
EVAL_FIELDS = ("checkpoint", "task", "mode", "steps", "metric_name", "metric_value")
MODES = ("zero_shot", "fine_tuned")


# -- helpers ----------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else repr(float(v))
    return v


def write_rows(path: Path, fields, rows, append: bool = False) -> None:
    exists = append and path.exists()
    with open(path, "a" if exists else "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(fields), lineterminator="\n", extrasaction="ignore")
        if not exists:
            w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row[k]) for k in fields})


def read_rows(path: Path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def _overrides(pairs) -> dict[str, str]:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def resolve_config(args, **flag_keys) -> RunConfig:
    """Config file, then ``--set`` pairs, then dedicated flags (last wins)."""
    over = _overrides(getattr(args, "set", None))
    for flag, key in flag_keys.items():
        value = getattr(args, flag, None)
        if value is not None:
            over[key] = str(value)
    return load_config(args.config, over)


def world_for(cfg: RunConfig, path: str | None) -> SyntheticWorld:
    if path is None:
        return generate_world(cfg.world_seed, cfg.world_dims(), cfg.task_names)
    world = SyntheticWorld.load(path)
    names = [t.name for t in world.tasks]
    if world.seed != cfg.world_seed or world.dims != cfg.world_dims() or names != cfg.task_names:
        raise ConfigError(f"world {path} (seed={world.seed}, tasks={names}, dims={asdict(world.dims)}) "
                          f"does not match the config")
    return world


# -- subcommands ------------------------------------------------------------

def cmd_gen_world(args) -> int:
    cfg = resolve_config(args, seed="world_seed", task="tasks")
    world = generate_world(cfg.world_seed, cfg.world_dims(), cfg.task_names)
    out = Path(args.out or "world.vbrg")
    out.parent.mkdir(parents=True, exist_ok=True)
    world.save(out)
    print(f"wrote {out} (tasks: {', '.join(cfg.task_names)})")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = resolve_config(args, seed="seed", epochs="epochs", task="tasks", steps="N", out="out")
    if cfg.noise_anchor and cfg.objective == "direct":
        raise ConfigError("noise_anchor and objective=direct cannot be combined")
    world = world_for(cfg, args.world)
    extra = world.dims.channels if cfg.noise_anchor else 0
    arch = ablations.make_arch(world, cfg.base_arch(), extra_cond_dim=extra)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.dumps())
    ckpt_path = out / "checkpoint.vbrg"
    metrics_path = out / "metrics.csv"
    meta = {"config": cfg.to_dict(), "seed": cfg.seed, "world": world.metadata()}

    if args.oracle:
        save_checkpoint(ckpt_path, Checkpoint("oracle", arch, meta=meta))
        write_rows(metrics_path, METRIC_FIELDS, [])
        print(f"wrote oracle checkpoint {ckpt_path}")
        return EXIT_OK

    kind = "osd" if cfg.objective == "direct" else "velocity"
    flow_cfg = cfg.flow_config()
    history: list[dict] = []
    if args.resume:
        ck = load_checkpoint(args.resume)
        if ck.kind != kind or ck.arch != arch:
            raise ConfigError(f"cannot resume: checkpoint {args.resume} has kind={ck.kind}, "
                              f"arch={ck.arch.to_dict()}; this run needs kind={kind}, arch={arch.to_dict()}")
        params, state, start = ck.params, ck.state, ck.epoch
        if start > cfg.epochs:
            raise ConfigError(f"checkpoint is at epoch {start}, beyond epochs={cfg.epochs}")
        prior = Path(args.resume).parent / "metrics.csv"
        if prior.exists():
            history = [r for r in read_rows(prior) if int(r["epoch"]) <= start]
    else:
        params, state, start = init_params(arch, cfg.seed), None, 0

    names = [t.name for t in world.tasks]
    anchor = "noise" if cfg.noise_anchor else "tokens"
    val_sets = {n: d for n, d in zip(names, ablations.build_dataset(world, names, "val", anchor))}

    def model_of(p):
        return DirectModel(p) if kind == "osd" else p

    def evaluate(p, epoch):
        if not (epoch == cfg.epochs or (cfg.eval_every and epoch % cfg.eval_every == 0)):
            return []
        rows = []
        for name in names:
            data = val_sets[name]
            rng = np.random.default_rng([cfg.seed, epoch, 17])
            k = rng.integers(0, cfg.K, size=len(data))
            source = data.source
            if anchor == "noise":
                source = noise_start(world, name, "val", data.source)
            loss, _ = flow_loss(p, source, data.target, k, cfg.K, data.spec, data.extra, objective=cfg.objective)
            for metric, value in eval_zero_shot(model_of(p), world, name, cfg.N).items():
                rows.append({"epoch": epoch, "task_id": data.spec.task_id, "split": "val",
                             "loss": float(loss.data), "metric_name": metric, "metric_value": value})
        return rows

    def on_epoch_end(epoch, p, st, rows):
        history.extend(rows)
        save_checkpoint(ckpt_path, Checkpoint(kind, arch, p, st, epoch, meta))
        write_rows(metrics_path, METRIC_FIELDS, history)
        last = [r for r in rows if r["split"] == "train"]
        print(f"epoch {epoch}: loss {np.mean([r['loss'] for r in last]):.6f}", flush=True)

    if start == cfg.epochs:
        save_checkpoint(ckpt_path, Checkpoint(kind, arch, params, state, start, meta))
        write_rows(metrics_path, METRIC_FIELDS, history)
    else:
        dataset = ablations.build_dataset(world, names, "train", anchor)
        train(dataset, params, flow_cfg, state=state, start_epoch=start, evaluate=evaluate,
              on_epoch_end=on_epoch_end)
    print(f"wrote {ckpt_path} and {metrics_path}")
    return EXIT_OK


def _load_eval_inputs(args):
    ck = load_checkpoint(args.checkpoint)
    ck_cfg = ck.meta.get("config", {})
    if args.config:
        cfg = resolve_config(args)
        if _arch_core(cfg) != _arch_core_of(ck.arch):
            raise ConfigError(f"checkpoint arch {ck.arch.to_dict()} does not match the config")
    else:
        cfg = load_config(None, {k: str(v) if not isinstance(v, bool) else ("true" if v else "false")
                                 for k, v in ck_cfg.items()})
    world = world_for(cfg, args.world)
    ablations.check_compatible(ck.arch, world)
    return ck, cfg, world


def _arch_core(cfg: RunConfig) -> tuple:
    a = cfg.base_arch()
    return (a.n_blocks, a.d_model, a.mixing, a.n_heads, a.cond_dim, a.mlp_ratio, a.task_embed)


def _arch_core_of(arch) -> tuple:
    return (arch.n_blocks, arch.d_model, arch.mixing, arch.n_heads, arch.cond_dim, arch.mlp_ratio, arch.task_embed)


def _steps(value, default: int) -> list[int]:
    if value is None:
        return [default]
    try:
        steps = [int(s) for s in str(value).split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--steps expects integers, got {value!r}") from None
    if not steps or any(s < 1 for s in steps):
        raise ConfigError(f"--steps values must be >= 1, got {value!r}")
    return steps


def cmd_eval(args) -> int:
    ck, cfg, world = _load_eval_inputs(args)
    if args.mode not in MODES:
        raise ConfigError(f"--mode must be one of {MODES}")
    names = [args.task] if args.task else [t.name for t in world.tasks]
    rows = []
    for name in names:
        world.task(name)
        for n in _steps(args.steps, cfg.N):
            if args.mode == "zero_shot":
                metrics = eval_zero_shot(ck.model, world, name, n)
            else:
                metrics = eval_fine_tuned(ck.model, world, name, n, cfg.decoder_epochs, cfg.decoder_lr)
            for metric, value in metrics.items():
                row = {"checkpoint": str(args.checkpoint), "task": name, "mode": args.mode, "steps": n,
                       "metric_name": metric, "metric_value": value}
                rows.append(row)
                print(f"{name}\t{args.mode}\tN={n}\t{metric}={value:.4f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_rows(out / "eval.csv", EVAL_FIELDS, rows, append=True)
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = resolve_config(args, seed="seed", epochs="epochs", steps="N", out="out")
    if args.suite not in ablations.SUITES:
        raise ConfigError(f"unknown suite {args.suite!r}; valid suites: {', '.join(ablations.SUITES)}")
    world = ablations.suite_world(args.suite, cfg.world_seed, cfg.world_dims(), args.task)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.dumps())

    def progress(row):
        print(f"{row['variant']}\t{row['task']}\tN={row['steps']}\t{row['metric_name']}={row['metric_value']:.4f}",
              flush=True)

    rows = ablations.run_suite(args.suite, world, cfg.flow_config(), cfg.base_arch(), args.task,
                               cfg.decoder_epochs, progress)
    path = out / f"ablate_{args.suite}.csv"
    write_rows(path, ablations.ROW_FIELDS, rows)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    if not args.checkpoint:
        raise ConfigError("analyze needs at least one --checkpoint")
    out = Path(args.out or "analysis")
    sim_rows, trajectories = [], {}
    seen: set[str] = set()
    for path in args.checkpoint:
        a = argparse.Namespace(**{**vars(args), "checkpoint": path})
        ck, cfg, world = _load_eval_inputs(a)
        name = args.task or world.tasks[0].name
        N = _steps(args.steps, cfg.N)[0]
        snaps: list[np.ndarray] = []
        gen = transport(ck.model, world, name, "val", N, trajectory=snaps)
        target = world.targets(name, "val")[0]
        sim = analytics.latent_similarity(gen[0], target, pooled=cfg.pooled_similarity)
        variant = Path(path).stem
        if variant == "checkpoint" and Path(path).resolve().parent.name:
            variant = Path(path).resolve().parent.name
        while variant in seen:
            variant += "_"
        seen.add(variant)
        sim_rows.append({"variant": variant, "cosine_sim": sim.value,
                         "mean_std": analytics.latent_variance(gen[0], pooled=cfg.pooled_similarity)})
        if len(snaps) >= 3:
            dump = analytics.TrajectoryDump(snaps, world.task_index(name), N, cfg.seed)
            trajectories[variant] = analytics.pca_trajectory(dump, target)
        else:
            log.warning("%s: no trajectory (needs a flow model with N >= 2)", path)
    for p in analytics.emit_plots(sim_rows, trajectories, out):
        print(f"wrote {p}")
    return EXIT_OK


# -- argument parsing -------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowbridge", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *flags):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        for flag in flags:
            if flag == "seed":
                p.add_argument("--seed", type=int)
            elif flag == "epochs":
                p.add_argument("--epochs", type=int)
            elif flag == "steps":
                p.add_argument("--steps", help="Euler steps N (eval/analyze accept a comma list)")
            elif flag == "task":
                p.add_argument("--task")
            elif flag == "out":
                p.add_argument("--out")
            elif flag == "world":
                p.add_argument("--world", help="world file from gen-world (default: regenerate from config)")

    p = sub.add_parser("gen-world", help="generate and save a synthetic world")
    common(p, "seed", "task", "out")
    p.set_defaults(func=cmd_gen_world)

    p = sub.add_parser("train", help="train a velocity field (or OSD regressor)")
    common(p, "seed", "epochs", "task", "steps", "out", "world")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--oracle", action="store_true", help="write a constant-field oracle checkpoint instead")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="zero-shot or fine-tuned evaluation of a checkpoint")
    common(p, "task", "steps", "out", "world")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", default="zero_shot", choices=MODES)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run an ablation suite")
    common(p, "seed", "epochs", "task", "steps", "out")
    p.add_argument("--suite", required=True, help=f"one of: {', '.join(ablations.SUITES)}")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("analyze", help="latent statistics and PCA trajectories")
    common(p, "task", "steps", "out", "world")
    p.add_argument("--checkpoint", action="append", help="repeatable")
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ContractError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
