import pytest

from dissipacert.config import ConfigError, RunConfig, child_seed, load_config


def test_defaults_round_trip():
    cfg = RunConfig()
    assert RunConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.sampling.samples == 5000 and cfg.lipschitz.rho == 500


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"sampling": {"samplez": 3}})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"bogus": {}})


def test_override_ignores_none():
    cfg = RunConfig().override("sampling", samples=None)
    assert cfg == RunConfig()
    assert RunConfig().override("sampling", samples=7).sampling.samples == 7


def test_yaml_and_env(tmp_path, monkeypatch):
    p = tmp_path / "c.yaml"
    p.write_text("sampling:\n  samples: 123\nrun:\n  seed: 9\n")
    assert load_config(p).sampling.samples == 123
    monkeypatch.setenv("DISSIPACERT_CONFIG", str(p))
    assert load_config().run.seed == 9
    p.write_text("sampling: [1, 2\n")
    with pytest.raises(ConfigError):
        load_config(p)


def test_child_seeds_distinct_and_stable():
    seeds = {child_seed(0, st, i) for st in ("sample", "covering", "lipschitz", "audit") for i in range(10)}
    assert len(seeds) == 40
    assert child_seed(5, "sample", 3) == child_seed(5, "sample", 3)
    with pytest.raises(ValueError):
        child_seed(0, "nope")
