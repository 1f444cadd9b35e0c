import numpy as np
import pytest

from flowbridge import ablations
from flowbridge.errors import ContractError
from flowbridge.flow import FlowConfig
from flowbridge.tasks import WorldDims
from flowbridge.velocity import ArchDescriptor

DIMS = WorldDims(n_train=64, n_val=32)
ARCH = ArchDescriptor(n_blocks=1, d_model=16, cond_dim=16)
CFG = FlowConfig(epochs=1, batch_size=32, warmup_steps=1)


def _rows(suite, **kw):
    world = ablations.suite_world(suite, 0, DIMS)
    return ablations.run_suite(suite, world, CFG, ARCH, decoder_epochs=2, **kw)


@pytest.mark.parametrize("suite, variants", [
    ("osd", ["flow", "osd"]),
    ("noise_anchor", ["token_anchor", "noise_anchor"]),
    ("flow_steps", ["N=1", "N=2", "N=10"]),
    ("task_embed", ["circular", "random", "constant"]),
])
def test_suite_rows(suite, variants):
    seen = []
    rows = _rows(suite, progress=seen.append)
    assert [r["variant"] for r in rows] == variants
    assert seen == rows
    for r in rows:
        assert set(r) == set(ablations.ROW_FIELDS)
        assert np.isfinite(r["metric_value"]) and np.isfinite(r["train_loss"])


def test_capacity_suite_has_three_rows_per_scale():
    rows = _rows("capacity")
    assert len(rows) == 9
    assert [r["variant"] for r in rows[:3]] == ["small/flow_zero_shot", "small/flow_fine_tuned", "small/osd"]
    assert {r["task"] for r in rows} == set(ablations.CAPACITY_TASKS.values())


def test_flow_steps_share_one_trained_field():
    rows = _rows("flow_steps")
    assert len({r["train_loss"] for r in rows}) == 1
    assert [r["steps"] for r in rows] == list(ablations.FLOW_STEPS)


def test_constant_embedding_cannot_beat_the_conflict_floor():
    # mirror tasks share their source, so at k = 0 a task-blind field makes one
    # prediction for two opposite velocities; no training can go below the floor
    world = ablations.suite_world("task_embed", 0, DIMS)
    names = [t.name for t in world.tasks]
    floor = ablations.conflict_floor(world, names)
    assert floor > 0
    rows = ablations.task_embed_ablation(world, CFG, ARCH, variants=("constant",))
    assert rows[0]["k0_loss"] >= floor * (1 - 1e-5)


def test_conflict_floor_by_hand():
    world = ablations.suite_world("task_embed", 0, DIMS)
    t = world.targets("classify_affine", "val")[0].data.astype(np.float64)
    # mirror target is the negation, so ((t - (-t)) / 2)^2 = t^2
    assert ablations.conflict_floor(world, ["classify_affine", "classify_affine_neg"]) == pytest.approx(
        float(np.mean(t ** 2)), rel=1e-9)


def test_guard_rails():
    world = ablations.suite_world("osd", 0, DIMS)
    with pytest.raises(ContractError):
        ablations.run_suite("nope", world, CFG)
    with pytest.raises(ContractError):
        ablations.task_embed_ablation(world, CFG)
    with pytest.raises(ContractError):
        ablations.fit(world, ablations.make_arch(world, ARCH), CFG, anchor="noise")
    with pytest.raises(ContractError):
        ablations.check_compatible(ArchDescriptor(data_dim=16), world)


def test_noise_anchor_adds_exactly_one_pooled_token_of_conditioning():
    world = ablations.suite_world("noise_anchor", 0, DIMS)
    data = ablations.build_dataset(world, anchor="noise")[0]
    assert data.extra.shape == (DIMS.n_train, DIMS.channels)
    base = ablations.make_arch(world, ARCH)
    run = ablations.noise_anchor_baseline(world, "classify_affine", base, CFG)
    assert run.model.arch.extra_cond_dim == base.extra_cond_dim + DIMS.channels
