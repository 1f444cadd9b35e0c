"""Latent statistics, PCA feature trajectories and figure emission."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractError
from .tokens import RepBatch

log = logging.getLogger(__name__)

SIMILARITY_FIELDS = ("variant", "cosine_sim", "mean_std")
TRAJECTORY_FIELDS = ("step", "pc1", "pc2", "is_target")


def _as_array(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, RepBatch) else x, dtype=np.float64)


def _per_sample(x: np.ndarray, pooled: bool) -> np.ndarray:
    if pooled:
        if x.ndim != 3:
            raise ContractError("pooled mode needs [B, P, D] tokens")
        return x.mean(axis=1)
    return x.reshape(len(x), -1)


@dataclass
class Similarity:
    value: float
    excluded: int


def latent_similarity(gen, target, pooled: bool = False) -> Similarity:
    """Mean cosine similarity between matching samples of two batches.

    Samples are flattened (or mean-pooled over tokens with ``pooled``).
    Pairs where either side has zero norm are left out and counted.
    """
    a, b = _as_array(gen), _as_array(target)
    if a.shape != b.shape:
        raise ContractError(f"shape mismatch {a.shape} vs {b.shape}")
    a, b = _per_sample(a, pooled), _per_sample(b, pooled)
    na, nb = np.linalg.norm(a, axis=1), np.linalg.norm(b, axis=1)
    keep = (na > 0) & (nb > 0)
    excluded = int((~keep).sum())
    if excluded:
        log.warning("latent_similarity: excluded %d zero-norm samples", excluded)
    if not keep.any():
        raise ContractError("every sample has zero norm")
    cos = (a[keep] * b[keep]).sum(axis=1) / (na[keep] * nb[keep])
    return Similarity(float(np.clip(cos, -1.0, 1.0).mean()), excluded)


def latent_variance(batch, pooled: bool = False) -> float:
    """Average over feature dimensions of the population std across samples."""
    x = _as_array(batch)
    if len(x) < 2:
        raise ContractError(f"need at least two samples, got {len(x)}")
    return float(_per_sample(x, pooled).std(axis=0).mean())


@dataclass
class TrajectoryDump:
    """Flattened states ``[B, P*D]`` after each of ``N`` steps, initial state first."""

    snapshots: list[np.ndarray]
    task_id: int = 0
    N: int = 0
    seed: int = 0

    def __post_init__(self):
        self.snapshots = [np.asarray(s, dtype=np.float64).reshape(len(s), -1) for s in self.snapshots]
        if self.N == 0:
            self.N = len(self.snapshots) - 1
        if len(self.snapshots) != self.N + 1:
            raise ContractError(f"expected {self.N + 1} snapshots, got {len(self.snapshots)}")
        shapes = {s.shape for s in self.snapshots}
        if len(shapes) != 1:
            raise ContractError(f"snapshot shapes differ: {sorted(shapes)}")


@dataclass
class PCATrajectory:
    steps: np.ndarray  # [N+1, k]
    target: np.ndarray  # [k]
    components: np.ndarray  # [k, F]
    singular_values: np.ndarray
    rank_deficient: bool = False
    mean: np.ndarray = field(default=None, repr=False)


def _fix_signs(vt: np.ndarray) -> np.ndarray:
    idx = np.abs(vt).argmax(axis=1)
    signs = np.sign(vt[np.arange(len(vt)), idx])
    signs[signs == 0] = 1.0
    return vt * signs[:, None]


def pca_trajectory(dump: TrajectoryDump, target, tol: float = 1e-10) -> PCATrajectory:
    """Project per-step mean states and the mean target onto the top two components.

    The components come from an SVD of every sample of every snapshot plus
    the target batch, centered by their joint mean. Each component is
    signed so its largest-magnitude loading is positive.
    """
    if len(dump.snapshots) < 3:
        raise ContractError(f"need at least 3 snapshots, got {len(dump.snapshots)}")
    tgt = _as_array(target).reshape(len(_as_array(target)), -1)
    if tgt.shape[1] != dump.snapshots[0].shape[1]:
        raise ContractError("target feature size differs from the snapshots")
    data = np.concatenate([*dump.snapshots, tgt])
    mean = data.mean(axis=0)
    _, s, vt = np.linalg.svd(data - mean, full_matrices=False)
    rank = int((s > tol * max(s[0], 1e-300)).sum()) if len(s) else 0
    k = 2 if rank >= 2 else 1
    comps = _fix_signs(vt[:k])
    project = lambda x: (x.mean(axis=0) - mean) @ comps.T
    steps = np.stack([project(snap) for snap in dump.snapshots])
    return PCATrajectory(steps, project(tgt), comps, s, rank < 2, mean)


# -- emission ---------------------------------------------------------------

def _write_csv(path: Path, fields: Sequence[str], rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(fields), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row[k]) for k in fields})


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def trajectory_rows(traj: PCATrajectory) -> list[dict]:
    def pcs(p):
        return float(p[0]), float(p[1]) if len(p) > 1 else 0.0

    rows = [dict(zip(TRAJECTORY_FIELDS, (n, *pcs(p), 0))) for n, p in enumerate(traj.steps)]
    rows.append(dict(zip(TRAJECTORY_FIELDS, (len(traj.steps), *pcs(traj.target), 1))))
    return rows


def _svg_settings():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "flowbridge"
    plt.rcParams["svg.fonttype"] = "none"
    return plt


def emit_plots(metrics: Sequence[dict], trajectories: dict[str, PCATrajectory], out_dir) -> list[Path]:
    """Write ``similarity_variance.csv`` and ``trajectory.csv`` plus SVG charts.

    ``metrics`` rows carry ``variant``, ``cosine_sim`` and ``mean_std``.
    ``trajectory.csv`` gets a leading ``variant`` column when more than one
    trajectory is given. SVGs are only drawn for non-empty data.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"cannot write to {out}: {exc}") from exc
    written = []
    sim_path = out / "similarity_variance.csv"
    _write_csv(sim_path, SIMILARITY_FIELDS, metrics)
    written.append(sim_path)
    traj_rows, fields = [], TRAJECTORY_FIELDS
    if len(trajectories) > 1:
        fields = ("variant", *TRAJECTORY_FIELDS)
    for name, traj in trajectories.items():
        traj_rows.extend({"variant": name, **r} for r in trajectory_rows(traj))
    traj_path = out / "trajectory.csv"
    _write_csv(traj_path, fields, traj_rows)
    written.append(traj_path)
    if metrics:
        written.append(_similarity_chart(metrics, out / "similarity_variance.svg"))
    if trajectories:
        written.append(_trajectory_chart(trajectories, out / "trajectory.svg"))
    return written


def _similarity_chart(metrics: Sequence[dict], path: Path) -> Path:
    plt = _svg_settings()
    names = [m["variant"] for m in metrics]
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(names)), 3.5))
    ax.bar(x, [m["mean_std"] for m in metrics], color="#9ab", label="mean std")
    ax.set_ylabel("mean per-dimension std")
    ax.set_xticks(x, names)
    ax2 = ax.twinx()
    ax2.plot(x, [m["cosine_sim"] for m in metrics], "o-", color="#c33", label="cosine similarity")
    ax2.set_ylabel("cosine similarity")
    ax2.set_ylim(-1.05, 1.05)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def _trajectory_chart(trajectories: dict[str, PCATrajectory], path: Path) -> Path:
    plt = _svg_settings()
    fig, ax = plt.subplots(figsize=(4.5, 4))
    for name, traj in trajectories.items():
        pts = traj.steps if traj.steps.shape[1] > 1 else np.c_[traj.steps, np.zeros(len(traj.steps))]
        tgt = traj.target if len(traj.target) > 1 else np.r_[traj.target, 0.0]
        line, = ax.plot(pts[:, 0], pts[:, 1], "o-", ms=3, label=name)
        ax.plot(tgt[0], tgt[1], "*", ms=12, color=line.get_color())
    ax.set_xlabel("PC1")
    ax.set_ylabel("PC2")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path
