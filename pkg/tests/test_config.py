import pytest

from seq2gmm.config import DEFAULTS, SEED_ENV, ExperimentConfig, load_config, parse_value, resolve_key
from seq2gmm.errors import ConfigError


def test_defaults_are_valid():
    cfg = load_config(environ={})
    assert cfg.seed == 0 and cfg.runs == 5
    tc = cfg.training_config()
    assert tc.K is None and tc.M is None and tc.lam == 0.1
    assert cfg.seeds() == [0, 1, 2, 3, 4]


def test_file_env_and_override_precedence(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('[train]\nseed = 3\nT = 4\n[model]\nK = 5\nM = "auto"\n[experiment]\nruns = 2\n')
    cfg = load_config(p, environ={})
    assert cfg.seed == 3 and cfg.training_config().T == 4
    assert cfg.training_config().K == 5 and cfg.training_config().M is None
    cfg = load_config(p, environ={SEED_ENV: "11"})
    assert cfg.seed == 11
    cfg = load_config(p, {"train.seed": 7, "K": 2}, environ={SEED_ENV: "11"})
    assert cfg.seed == 7 and cfg.training_config().K == 2
    assert cfg.seeds() == [7, 8]


@pytest.mark.parametrize("text", [
    "[bogus]\nx = 1\n",
    "[train]\nnot_a_key = 1\n",
    "[experiment]\nkind = 'other'\n",
    "[experiment]\nruns = 0\n",
    "[model]\nlam = -1.0\n",
    "[data]\nsource = 'ucr'\n",
    "[data]\nanomaly_span = [90, 20]\n",
    "[experiment]\naggregation = 'median'\n",
    "this is = not toml [",
])
def test_invalid_configs(tmp_path, text):
    p = tmp_path / "c.toml"
    p.write_text(text)
    with pytest.raises(ConfigError):
        load_config(p, environ={})


def test_bad_env_seed():
    with pytest.raises(ConfigError):
        load_config(environ={SEED_ENV: "seven"})


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "none.toml", environ={})


def test_parse_value_and_resolve_key():
    assert parse_value("3") == 3
    assert parse_value("0.5") == 0.5
    assert parse_value("[1, 2]") == [1, 2]
    assert parse_value("true") is True
    assert parse_value("max") == "max"
    assert resolve_key("seed") == ("train", "seed")
    assert resolve_key("model.K") == ("model", "K")
    with pytest.raises(ConfigError):
        resolve_key("nope")
    with pytest.raises(ConfigError):
        resolve_key("model.nope")


def test_every_key_belongs_to_one_section():
    seen = {}
    for section, keys in DEFAULTS.items():
        for k in keys:
            assert k not in seen, f"{k} in both {seen.get(k)} and {section}"
            seen[k] = section


def test_kind_specific_knobs_required():
    cfg = ExperimentConfig()
    cfg.experiment["kind"] = "ablation"
    cfg.experiment["segment_counts"] = []
    with pytest.raises(ConfigError):
        cfg.validate()


def test_synth_config_uses_run_seed():
    cfg = load_config(environ={})
    assert cfg.synth_config(9).seed == 9
    assert cfg.synth_config().period_length == 100
