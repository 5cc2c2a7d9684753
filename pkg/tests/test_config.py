import pytest

from fhn_meanfield import config as C
from fhn_meanfield.model import ConfigError


def test_preset_and_overrides():
    cfg = C.parse_config("[model]\npreset = bistable\neps = 3\nattractive = yes\n")
    assert cfg.model.lam == C.PRESETS["bistable"].lam
    assert cfg.model.eps == 3.0 and cfg.model.attractive
    assert cfg.preset == "bistable"


def test_sections_and_case_insensitive_keys():
    text = "[regime]\nJ_list = 0.1, 1, 3\nseeds = 1 2\n[chaos]\nn_list = 10 20\ntrials = 3\n[particles]\nJ = 0.5\n"
    cfg = C.parse_config(text)
    assert cfg.regime.J_list == (0.1, 1.0, 3.0)
    assert cfg.regime.seeds == (1, 2)
    assert cfg.chaos.n_list == (10, 20) and cfg.chaos.trials == 3
    assert cfg.particles.J == 0.5


def test_seed_override_and_digest():
    a = C.parse_config("[run]\nseed = 3\n")
    b = C.parse_config("[run]\nseed = 3\n", seed=9)
    assert a.run.seed == 3 and b.run.seed == 9
    assert a.digest != b.digest


@pytest.mark.parametrize("text", [
    "[model]\nbogus = 1\n",
    "[model]\na = x\n",
    "[nowhere]\na = 1\n",
    "[run]\nT = -1\n",
    "[grid]\nnx = 2\n",
    "[init]\nkind = cauchy\n",
    "[chaos]\nn_list = 10\n",
    "[regime]\nburn_in = 1.5\n",
    "[model]\npreset = nope\n",
    "not a config",
])
def test_invalid_configs(text):
    with pytest.raises(ConfigError):
        C.parse_config(text)


def test_missing_file():
    with pytest.raises(ConfigError, match="not found"):
        C.load_config("/nonexistent/x.cfg")


def test_shipped_configs_parse():
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "configs"
    files = sorted(root.glob("*.cfg"))
    assert files
    for f in files:
        C.load_config(f)
