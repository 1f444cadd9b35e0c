import csv

import numpy as np
import pytest

from flowbridge.checkpoint import load_checkpoint
from flowbridge.cli import main

TINY = ["--set", "n_train=64", "--set", "n_val=32", "--set", "n_blocks=1", "--set", "d_model=16",
        "--set", "cond_dim=16", "--set", "warmup_steps=1", "--set", "decoder_epochs=0", "--set", "eval_every=1"]


def rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def train(tmp_path, name, *extra):
    out = tmp_path / name
    assert main(["train", "--epochs", "2", "--out", str(out), *TINY, *extra]) == 0
    return out


def test_zero_epochs_writes_initial_checkpoint(tmp_path):
    out = train(tmp_path, "z", "--epochs", "0")
    assert load_checkpoint(out / "checkpoint.vbrg").epoch == 0
    assert rows(out / "metrics.csv") == []
    assert "epochs=0" in (out / "config.txt").read_text()


def test_reruns_are_byte_identical(tmp_path):
    a, b = train(tmp_path, "a"), train(tmp_path, "b")
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
    r = rows(a / "metrics.csv")
    assert {x["split"] for x in r} == {"train", "val"}
    assert {x["epoch"] for x in r} == {"1", "2"}
    assert {x["metric_name"] for x in r if x["split"] == "val"} == {"accuracy"}


def test_resume_matches_uninterrupted(tmp_path):
    pin = ["--set", "schedule_epochs=2"]
    full = train(tmp_path, "full", *pin)
    half = train(tmp_path, "half", *pin, "--epochs", "1")
    out = tmp_path / "resumed"
    assert main(["train", "--epochs", "2", "--out", str(out), "--resume", str(half / "checkpoint.vbrg"),
                 *TINY, *pin]) == 0
    a, b = load_checkpoint(full / "checkpoint.vbrg"), load_checkpoint(out / "checkpoint.vbrg")
    assert a.epoch == b.epoch == 2 and a.state.step == b.state.step
    for name, t in a.params.arrays.items():
        assert t.data.tobytes() == b.params.arrays[name].data.tobytes()
        assert a.state.m[name].tobytes() == b.state.m[name].tobytes()
        assert a.state.v[name].tobytes() == b.state.v[name].tobytes()
    assert (full / "metrics.csv").read_bytes() == (out / "metrics.csv").read_bytes()


def test_eval_sweep_and_modes(tmp_path):
    run = train(tmp_path, "r")
    ck = str(run / "checkpoint.vbrg")
    assert main(["eval", "--checkpoint", ck, "--steps", "1,2,10", "--out", str(tmp_path / "e")]) == 0
    sweep = rows(tmp_path / "e" / "eval.csv")
    assert [r["steps"] for r in sweep] == ["1", "2", "10"]
    assert main(["eval", "--checkpoint", ck, "--mode", "fine_tuned", "--out", str(tmp_path / "f")]) == 0
    assert main(["eval", "--checkpoint", ck, "--out", str(tmp_path / "g")]) == 0
    ft, zs = rows(tmp_path / "f" / "eval.csv"), rows(tmp_path / "g" / "eval.csv")
    # zero decoder epochs leave the frozen head untouched
    assert ft[0]["metric_value"] == zs[0]["metric_value"]


def test_oracle_checkpoint_is_perfect(tmp_path):
    oracle = train(tmp_path, "o", "--oracle")
    assert main(["eval", "--checkpoint", str(oracle / "checkpoint.vbrg"), "--out", str(tmp_path / "e")]) == 0
    assert float(rows(tmp_path / "e" / "eval.csv")[0]["metric_value"]) == 100.0


def test_analyze_oracle_and_trained(tmp_path):
    oracle, flow = train(tmp_path, "oracle", "--oracle"), train(tmp_path, "flow")
    out = tmp_path / "an"
    assert main(["analyze", "--checkpoint", str(oracle / "checkpoint.vbrg"),
                 "--checkpoint", str(flow / "checkpoint.vbrg"), "--steps", "4", "--out", str(out)]) == 0
    sim = {r["variant"]: r for r in rows(out / "similarity_variance.csv")}
    assert float(sim["oracle"]["cosine_sim"]) == pytest.approx(1.0, abs=1e-6)
    traj = [r for r in rows(out / "trajectory.csv") if r["variant"] == "oracle"]
    assert len(traj) == 4 + 2 and traj[-1]["is_target"] == "1"
    end, target = traj[-2], traj[-1]
    assert np.hypot(float(end["pc1"]) - float(target["pc1"]), float(end["pc2"]) - float(target["pc2"])) < 1e-5
    assert (out / "trajectory.svg").exists()


def test_gen_world_then_train_against_it(tmp_path):
    world = tmp_path / "w.vbrg"
    assert main(["gen-world", "--out", str(world), *TINY]) == 0
    train(tmp_path, "t", "--world", str(world), "--epochs", "1")
    # a world that disagrees with the config is refused
    assert main(["train", "--out", str(tmp_path / "x"), "--world", str(world), *TINY, "--seed", "0",
                 "--set", "world_seed=9"]) == 2


def test_ablate_writes_rows(tmp_path):
    out = tmp_path / "ab"
    assert main(["ablate", "--suite", "osd", "--epochs", "1", "--out", str(out), *TINY]) == 0
    assert [r["variant"] for r in rows(out / "ablate_osd.csv")] == ["flow", "osd"]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_exit_codes(tmp_path, capsys):
    assert main(["train", "--set", "bogus=1", "--out", str(tmp_path / "a")]) == 2
    assert main(["ablate", "--suite", "nope", "--out", str(tmp_path / "b")]) == 2
    assert main(["eval", "--checkpoint", str(tmp_path / "missing.vbrg")]) == 4
    junk = tmp_path / "junk.vbrg"
    junk.write_bytes(b"not a checkpoint")
    assert main(["eval", "--checkpoint", str(junk)]) == 4
    assert main(["train", "--out", str(tmp_path / "c"), *TINY, "--set", "lr=1e30", "--epochs", "1"]) == 3
    err = capsys.readouterr().err
    assert "bogus" in err and "nope" in err and "numeric abort" in err
