import json

import pytest

from stream_meta.config import ConfigError, RunConfig, config_hash, load_config, parse_config


class TestParse:
    def test_defaults(self):
        cfg = parse_config({})
        assert cfg == RunConfig()
        assert cfg.model.kind == "STREAM" and cfg.sampler.chains == 4 and cfg.alpha == 0.05

    def test_full_document(self):
        cfg = parse_config({
            "seed": 7,
            "data": {"path": "d.csv", "columns": {"y": "effect"}, "log_transform": True},
            "simulation": {"scenario": "iii", "reps": 2, "m": 30, "J": 5, "K": 2},
            "model": {"kind": "RE-GP", "p_e": 6, "jitter": 1e-7, "priors": {"eta_a": 1.0,
                                                                             "m_beta_theta": [0.5]}},
            "sampler": {"chains": 2, "warmup": 200, "samples": 300, "adapt_mass": True},
            "split": {"train_fraction": 0.75},
            "evaluation": {"alpha": 0.1},
            "output": {"directory": "o"},
        })
        assert cfg.seed == 7 and cfg.sampler.seed == 7
        assert cfg.columns == {"y": "effect"} and cfg.log_transform
        assert (cfg.scenario, cfg.reps, cfg.sim_m, cfg.sim_J, cfg.sim_K) == ("iii", 2, 30, 5, 2)
        assert cfg.model.kind == "RE-GP" and cfg.model.period == 6.0 and cfg.model.jitter == 1e-7
        assert cfg.model.priors.eta_a == 1.0 and cfg.model.priors.m_beta_theta == (0.5,)
        assert cfg.sampler.adapt_mass and cfg.train_fraction == 0.75 and cfg.out_dir == "o"

    def test_overrides_win(self):
        cfg = parse_config({"model": {"kind": "RE"}, "seed": 1}, {"model.kind": "FE", "seed": 9,
                                                                  "sampler.chains": None})
        assert cfg.model.kind == "FE" and cfg.seed == 9 and cfg.sampler.chains == 4

    @pytest.mark.parametrize("raw, field", [
        ({"model": {"kind": "RE-XYZ"}}, "model.kind"),
        ({"sampler": {"chains": 0}}, "sampler.chains"),
        ({"sampler": {"warmup": 1.5}}, "sampler.warmup"),
        ({"seed": -1}, "seed"),
        ({"seed": True}, "seed"),
        ({"split": {"train_fraction": 1.0}}, "split.train_fraction"),
        ({"evaluation": {"alpha": 0}}, "evaluation.alpha"),
        ({"simulation": {"scenario": "v"}}, "simulation.scenario"),
        ({"simulation": {"m": 1}}, "simulation.m"),
        ({"data": {"columns": {"bogus": "x"}}}, "data.columns"),
        ({"data": {"log_transform": "yes"}}, "data.log_transform"),
        ({"model": {"priors": {"eta_z": 1}}}, "model.priors"),
        ({"model": {"jitter": 0}}, "model.jitter"),
        ({"output": {"directory": ""}}, "output.directory"),
        ({"sampler": {"chain": 2}}, "chain"),
        ({"extra": {}}, "extra"),
    ])
    def test_invalid_names_field(self, raw, field):
        with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
            parse_config(raw)

    def test_not_an_object(self):
        with pytest.raises(ConfigError):
            parse_config([1, 2])


class TestHash:
    def test_stable_and_sensitive(self):
        a = parse_config({"seed": 3, "model": {"kind": "RE"}})
        b = parse_config({"model": {"kind": "RE"}, "seed": 3})
        assert config_hash(a) == config_hash(b) and len(config_hash(a)) == 64
        assert config_hash(a) != config_hash(parse_config({"seed": 4, "model": {"kind": "RE"}}))

    def test_json_round_trip(self):
        cfg = parse_config({"seed": 5, "model": {"kind": "STREAM", "priors": {"m_beta_theta": [1.0]}}})
        assert parse_config(json.loads(json.dumps(cfg.to_json()))) == cfg


class TestLoad:
    def test_file(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"seed": 2}))
        assert load_config(p).seed == 2
        assert load_config(None, {"seed": 4}).seed == 4

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="does not exist"):
            load_config(tmp_path / "nope.json")

    def test_bad_json(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{seed: 1")
        with pytest.raises(ConfigError, match="invalid JSON"):
            load_config(p)
