import dataclasses

import pytest
from hypothesis import given
from hypothesis import strategies as st

from yoeo.config import RunConfig, apply_overrides, parse_config, serialize_config
from yoeo.errors import ConfigurationError

DEFAULTS = [
    ("value_lr", 1e-4), ("critic_lr", 1e-3), ("actor_lr", 3e-4), ("critic_weight_decay", 1e-8),
    ("batch_size", 100), ("value_steps", 1_000_000), ("critic_steps", 1_000_000),
    ("feature_dim", 64), ("value_hidden", 256), ("critic_hidden", 256), ("actor_hidden", 256),
    ("n_quantiles", 16), ("n_target_quantiles", 16), ("n_samples", 10), ("lam", 0.1),
    ("tau1", 0.9), ("tau2", 0.1), ("n_critics", 5), ("nstep", 10), ("gamma", 0.99),
    ("kappa", 1.0), ("ema_decay", 0.995), ("sigma", 0.3), ("noise_clip", 0.5), ("knn_k", 100),
]


@pytest.mark.parametrize("name,value", DEFAULTS)
def test_defaults(name, value):
    assert getattr(RunConfig(), name) == value


@given(seed=st.integers(0, 2**31), lam=st.floats(0, 10), steps=st.integers(0, 10**6),
       median=st.booleans(), variant=st.sampled_from(["full", "no_reg", "no_mu", "sarsa_target"]))
def test_text_roundtrip(seed, lam, steps, median, variant):
    cfg = RunConfig(seed=seed, lam=lam, critic_steps=steps, median_target=median, variant=variant)
    text = serialize_config(cfg)
    assert parse_config(text) == cfg
    assert serialize_config(parse_config(text)) == text


def test_every_field_is_serialized():
    text = serialize_config(RunConfig())
    for f in dataclasses.fields(RunConfig):
        assert f"\n{f.name} = " in "\n" + text


def test_unknown_keys_and_sections():
    with pytest.raises(ConfigurationError, match="unknown"):
        parse_config("[critic]\nlamda = 1\n")
    with pytest.raises(ConfigurationError, match="unknown"):
        parse_config("[extras]\nx = 1\n")
    with pytest.raises(ConfigurationError):
        parse_config("[run]\nlam = 1\n")  # right key, wrong section
    with pytest.raises(ConfigurationError):
        apply_overrides(RunConfig(), {"nope": "1"})


def test_validation():
    with pytest.raises(ConfigurationError):
        RunConfig(tau1=0.1, tau2=0.9)
    with pytest.raises(ConfigurationError):
        RunConfig(gamma=1.5)
    with pytest.raises(ConfigurationError):
        RunConfig(variant="cql")
    with pytest.raises(ConfigurationError, match="bad value"):
        parse_config("[train]\nbatch_size = many\n")


def test_overrides_coerce_types():
    cfg = apply_overrides(RunConfig(), {"batch_size": "32", "median_target": "false", "lam": "1"})
    assert cfg.batch_size == 32 and cfg.median_target is False and cfg.lam == 1.0
