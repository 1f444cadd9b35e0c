import pytest

from flowbridge.config import ConfigError, RunConfig, load_config, parse_lines


def test_defaults_round_trip_through_text(tmp_path):
    cfg = RunConfig()
    path = tmp_path / "c.txt"
    path.write_text(cfg.dumps())
    assert load_config(path) == cfg


def test_overrides_win_over_file(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("# desk run\nepochs = 3\nlr=0.01  # peak\n\nnoise_anchor=yes\n")
    cfg = load_config(path, {"epochs": "7"})
    assert (cfg.epochs, cfg.lr, cfg.noise_anchor) == (7, 0.01, True)


@pytest.mark.parametrize("text, match", [
    ("bogus=1", "unknown"),
    ("epochs=three", "epochs"),
    ("epochs=1\nepochs=2", "duplicate"),
    ("just a line", "key=value"),
    ("noise_anchor=maybe", "noise_anchor"),
    ("mixing=conv", "mixing"),
    ("tasks=", "tasks"),
    ("K=0", "K"),
])
def test_bad_configs_are_rejected(tmp_path, text, match):
    path = tmp_path / "c.txt"
    path.write_text(text)
    with pytest.raises(ConfigError, match=match):
        load_config(path)


def test_derived_views():
    cfg = RunConfig(tasks="classify_affine, retrieve", channels=16, objective="direct")
    assert cfg.task_names == ["classify_affine", "retrieve"]
    assert cfg.world_dims().channels == 16
    assert cfg.flow_config().objective == "direct"
    assert cfg.with_overrides({"seed": "4"}).seed == 4
    assert parse_lines("a=b=c") == {"a": "b=c"}
