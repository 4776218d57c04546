import json

import pytest

from xaiseg.config import SEED_ENV, ConfigError, RunConfig, from_dict, load_config, to_dict, write_resolved


@pytest.fixture(autouse=True)
def no_seed_env(monkeypatch):
    monkeypatch.delenv(SEED_ENV, raising=False)


def write(tmp_path, data):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(data))
    return p


def test_defaults():
    cfg = load_config()
    assert cfg == load_config(None, {})
    assert (cfg.postproc.r1, cfg.postproc.min_area, cfg.postproc.r2) == (1, 3, 6)
    assert cfg.growth.r_dilate == 1 and cfg.method.name == "lrp"


@pytest.mark.parametrize("data", [{"bogus": 1}, {"data": {"n_trian": 3}}, {"method": {"lrp": {"gama": 1}}},
                                  {"method": {"name": "saliency"}}, {"jobs": 0}, {"data": []},
                                  {"benchmark": {"methods": ["lrp", "nope"]}}, {"train": {"learning_rate": -1}}])
def test_invalid_configs_are_rejected(tmp_path, data):
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, data))


def test_invalid_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(p)


def test_partial_sections_keep_other_defaults(tmp_path):
    cfg = load_config(write(tmp_path, {"data": {"n_train": 10}, "method": {"baseline": {"n_samples": 3}}}))
    default = RunConfig()
    assert cfg.data.n_train == 10 and cfg.data.n_val == default.data.n_val
    assert cfg.method.baseline.n_samples == 3 and cfg.method.baseline.kind == default.method.baseline.kind
    assert cfg.method.steps == default.method.steps


def test_lists_become_tuples(tmp_path):
    cfg = load_config(write(tmp_path, {"data": {"width_range": [2, 3]}, "benchmark": {"methods": ["raw"]}}))
    assert cfg.data.width_range == (2, 3) and cfg.benchmark.methods == ("raw",)


def test_seed_reaches_every_stage(tmp_path, monkeypatch):
    cfg = load_config(write(tmp_path, {"seed": 7}))
    assert cfg.data.seed == cfg.train.seed == cfg.explainer_train.seed == 7
    monkeypatch.setenv(SEED_ENV, "11")
    cfg = load_config(write(tmp_path, {"seed": 7}))
    assert cfg.seed == cfg.data.seed == cfg.train.seed == 11
    monkeypatch.setenv(SEED_ENV, "x")
    with pytest.raises(ConfigError):
        load_config()


def test_overrides_skip_none():
    cfg = load_config(None, {"jobs": None, "dataset": "m.csv"})
    assert cfg.jobs == 1 and cfg.dataset == "m.csv"


def test_resolved_config_rebuilds_the_run(tmp_path):
    cfg = load_config(write(tmp_path, {"seed": 3, "data": {"n_test": 5}, "method": {"name": "raw"}}))
    path = write_resolved(cfg, tmp_path / "out")
    again = load_config(path)
    assert again == cfg and to_dict(again) == json.loads(path.read_text())


def test_from_dict_overlays_a_base():
    base = from_dict(RunConfig, {"jobs": 3})
    cfg = from_dict(RunConfig, {"seed": 2}, base=base)
    assert (cfg.jobs, cfg.seed) == (3, 2)
