import pytest

from eqpide import ConfigError, load_config

E0_TOML = """\
[market]
r0 = 0.02
r = 0.06
sigma = 0.2
horizon = 1.0
mu = 1.0
x0 = 1.0
"""


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "e0.toml"
    p.write_text(E0_TOML)
    return str(p)


def test_defaults_merged(cfg_path):
    cfg = load_config(cfg_path)
    assert cfg.section("grid")["nx"] == 81
    assert cfg.section("mc")["seed"] == 12_345
    assert cfg.section("output")["dir"] == "out"


def test_market_constructed(cfg_path):
    params = load_config(cfg_path).market()
    assert params.T == 1.0
    assert params.r0(0.5) == 0.02


def test_missing_key_named(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text(E0_TOML.replace("horizon = 1.0\n", ""))
    with pytest.raises(ConfigError, match="market.horizon"):
        load_config(str(p))


def test_missing_file():
    with pytest.raises(ConfigError, match="not found"):
        load_config("/nonexistent/nope.toml")


def test_parse_error_reported(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("not toml ===")
    with pytest.raises(ConfigError, match="parse error"):
        load_config(str(p))


def test_set_overrides_typed(cfg_path):
    cfg = load_config(cfg_path, overrides=["mc.n_paths=777",
                                           "verify.se_mult=2.5",
                                           "output.dir=elsewhere"])
    assert cfg.section("mc")["n_paths"] == 777
    assert cfg.section("verify")["se_mult"] == 2.5
    assert cfg.section("output")["dir"] == "elsewhere"


def test_set_list_override(cfg_path):
    cfg = load_config(cfg_path, overrides=['verify.checks=["ode"]'])
    assert cfg.section("verify")["checks"] == ["ode"]


def test_bad_set_expression(cfg_path):
    with pytest.raises(ConfigError):
        load_config(cfg_path, overrides=["justakey"])
    with pytest.raises(ConfigError):
        load_config(cfg_path, overrides=["nodot=3"])


def test_seed_and_out_flags(cfg_path):
    cfg = load_config(cfg_path, seed=99, out_dir="d")
    assert cfg.section("mc")["seed"] == 99
    assert cfg.section("output")["dir"] == "d"


def test_hash_stable_and_ignores_output_dir(cfg_path):
    a = load_config(cfg_path)
    b = load_config(cfg_path, out_dir="other")
    c = load_config(cfg_path, seed=99)
    assert a.config_hash == b.config_hash
    assert a.config_hash != c.config_hash
    assert len(a.config_hash) == 12


def test_jump_entry_validation(tmp_path):
    p = tmp_path / "j.toml"
    p.write_text(E0_TOML + "\n[[market.jumps]]\nsize = -0.1\n")
    with pytest.raises(ConfigError, match="jumps"):
        load_config(str(p))


def test_grid_square_enforced(cfg_path):
    cfg = load_config(cfg_path, overrides=["grid.nx=21"])
    with pytest.raises(ConfigError, match="nx"):
        cfg.grid()
