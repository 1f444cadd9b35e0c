import numpy as np
import pytest
from hypothesis import given, strategies as st

from flowbridge.errors import ContractError, FormatError
from flowbridge.tasks import (ORACLE, PRESETS, SyntheticWorld, TaskInstance, WorldDims, chance_level,
                              eval_fine_tuned, eval_zero_shot, finetune_decoder, generate_world, recall_at_k,
                              teacher_metrics, transport)
from flowbridge.tokens import MultiScaleTokens, RepBatch
from flowbridge.velocity import ArchDescriptor, init_params
from oracles import chance_accuracy, recall_brute

SMALL = WorldDims(n_train=300, n_val=200)
ALL = ["classify_affine", "classify_orthogonal", "classify_mlp", "dense_pyramid", "retrieve", "retrieve_identical"]


@pytest.fixture(scope="module")
def world():
    return generate_world(5, SMALL, ALL)


def test_same_seed_same_world():
    a, b = generate_world(3, SMALL, ["classify_affine"]), generate_world(3, SMALL, ["classify_affine"])
    assert a.arrays.keys() == b.arrays.keys()
    assert all(a.arrays[k].tobytes() == b.arrays[k].tobytes() for k in a.arrays)
    c = generate_world(4, SMALL, ["classify_affine"])
    assert c.arrays["source/w"].tobytes() != a.arrays["source/w"].tobytes()


def test_splits_are_disjoint(world):
    train = {row.tobytes() for row in world.inputs("train")}
    assert not any(row.tobytes() in train for row in world.inputs("val"))


@pytest.mark.parametrize("name", ["classify_affine", "classify_orthogonal", "classify_mlp"])
def test_teacher_consistency(world, name):
    labels = world.labels(name, "val")
    assert np.array_equal(world.decode(name, world.targets(name, "val")), labels)
    assert teacher_metrics(world, name)["accuracy"] == 100.0
    # labels are spread over many of the 64 classes
    assert len(np.unique(world.labels(name, "train"))) > 32


@pytest.mark.parametrize("name", ALL)
def test_oracle_transport_equals_teacher(world, name):
    got = eval_zero_shot(ORACLE, world, name, 10)
    ref = teacher_metrics(world, name)
    assert got.keys() == ref.keys()
    for k in ref:
        assert abs(got[k] - ref[k]) <= 1e-5
    if "accuracy" in ref:
        assert ref["accuracy"] == 100.0
    if "per_token_mse" in ref:
        assert got["per_token_mse"] < 1e-5
    if "i2t_R@1" in ref:
        assert got["i2t_R@1"] == 100.0


def test_identical_pair_encoders_give_perfect_recall(world):
    assert eval_zero_shot(ORACLE, world, "retrieve_identical", 1)["i2t_R@1"] == 100.0
    assert np.allclose(world.paired_embeddings("retrieve_identical", "val"),
                       world.decode("retrieve_identical", world.targets("retrieve_identical", "val")))


def test_untrained_model_is_at_chance(world):
    name = "classify_affine"
    arch = ArchDescriptor(level_factors=world.level_factors, num_tasks=len(world.tasks))
    params = init_params(arch, 0)
    preds = world.decode(name, transport(params, world, name, "val", 10))
    labels = world.labels(name, "val")
    p, sd = chance_level(labels, preds, 64)
    ref_p, ref_sd = chance_accuracy(labels, preds, 64)
    assert abs(p - ref_p) < 1e-12 and abs(sd - ref_sd) < 1e-12
    acc = float(np.mean(preds == labels))
    assert abs(acc - p) <= 4 * sd


@given(st.integers(2, 30), st.integers(1, 6), st.integers(0, 10_000))
def test_recall_is_monotone_and_matches_brute_force(n, d, seed):
    rng = np.random.default_rng(seed)
    q, g = rng.standard_normal((n, d)), rng.standard_normal((n, d))
    r = recall_at_k(q, g, ks=(1, 5, 10))
    assert r["R@1"] <= r["R@5"] <= r["R@10"]
    assert r["R@1"] == pytest.approx(recall_brute(q, g, 1))


def test_zero_decoder_epochs_equals_zero_shot(world):
    arch = ArchDescriptor(level_factors=world.level_factors, num_tasks=len(world.tasks))
    params = init_params(arch, 1)
    for name in ("classify_affine", "dense_pyramid", "retrieve"):
        assert eval_fine_tuned(params, world, name, 2, decoder_epochs=0) == eval_zero_shot(params, world, name, 2)


def test_fine_tuning_on_true_targets_keeps_teacher_metric(world):
    dec = finetune_decoder(world, "classify_affine", world.targets("classify_affine", "train"), 50)
    assert np.allclose(dec["adapter/w"], np.eye(32), atol=1e-6)
    feats = world.targets("classify_affine", "val")
    assert np.array_equal(world.decode("classify_affine", feats, dec), world.labels("classify_affine", "val"))


def test_fine_tuning_undoes_a_systematic_distortion(world):
    # a linear corruption of the flow output is exactly what the adapter can invert
    name = "classify_affine"
    mix = np.eye(32) + 0.3 * np.random.default_rng(0).standard_normal((32, 32)) / np.sqrt(32)

    def corrupt(split):
        t = world.targets(name, split)[0].data
        return MultiScaleTokens([RepBatch((t @ mix + 0.2).astype(np.float32))])

    before = world.decode(name, corrupt("val"))
    dec = finetune_decoder(world, name, corrupt("train"), 500)
    after = world.decode(name, corrupt("val"), dec)
    labels = world.labels(name, "val")
    assert np.mean(after == labels) > np.mean(before == labels)
    assert np.mean(after == labels) > 0.95


def test_unregistered_task_is_a_contract_error(world):
    with pytest.raises(ContractError):
        eval_zero_shot(ORACLE, world, "segment", 10)
    with pytest.raises(ContractError):
        generate_world(0, SMALL, [])
    with pytest.raises(ContractError):
        generate_world(0, SMALL, ["nope"])


def test_task_instance_invariants():
    with pytest.raises(ContractError):
        TaskInstance("x", "multiscale_pyramid", "dense_regress", level_factors=(1,))
    with pytest.raises(ContractError):
        TaskInstance("x", "conv", "classify")
    with pytest.raises(ContractError):
        generate_world(0, WorldDims(grid_side=3, input_dim=8), [PRESETS["dense_pyramid"]])
    assert PRESETS["dense_pyramid"].eval_protocol == "per_token_mse"
    assert PRESETS["retrieve"].eval_protocol == "recall_at_k"


def test_world_file_round_trip(world, tmp_path):
    path = tmp_path / "w.vbrg"
    world.save(path)
    back = SyntheticWorld.load(path)
    assert back.tasks == world.tasks and back.dims == world.dims and back.seed == world.seed
    assert all(back.arrays[k].tobytes() == world.arrays[k].tobytes() for k in world.arrays)
    assert np.array_equal(back.labels("classify_mlp", "val"), world.labels("classify_mlp", "val"))


def test_model_checkpoint_is_not_a_world(tmp_path):
    from flowbridge import serialization
    serialization.save(tmp_path / "x", {"kind": "velocity"}, {})
    with pytest.raises(FormatError):
        SyntheticWorld.load(tmp_path / "x")


def test_straight_paths_of_linear_teachers_never_degenerate(world):
    # (1 - tau) I + tau W must stay well conditioned for every tau in [0, 1]
    for name in ("classify_affine", "classify_orthogonal"):
        w = world._enc(name)["enc/w"].astype(np.float64)
        smallest = min(np.linalg.svd((1 - t) * np.eye(32) + t * w, compute_uv=False).min()
                       for t in np.linspace(0, 1, 101))
        assert smallest > 0.3


def test_mirror_task_negates_its_source():
    base = PRESETS["classify_affine"]
    mirror = TaskInstance("neg", "affine", "classify", mirror_of="classify_affine")
    w = generate_world(0, SMALL, [base, mirror])
    assert np.array_equal(w.targets("neg", "val")[0].data, -w.targets("classify_affine", "val")[0].data)
