import pytest

from acf.config import ConfigError, RunConfig, builtin_configs, load_config, parse_config
from acf.training import DOMAIN_DEFAULTS

MINIMAL = "[run]\nenv = taxi\n"


def test_minimal_config_fills_domain_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.env == "taxi" and cfg.seeds == [0]
    assert (cfg.model.latent_dim, cfg.model.n_actions) == (6, 6)
    assert cfg.train.beta_fwd == DOMAIN_DEFAULTS["taxi"]["beta_fwd"]
    assert cfg.dataset == "data/taxi.acfd"


def test_builtin_configs_echo_domain_hyperparameters():
    assert {"doorkey", "fourrooms", "grid2d", "taxi"} <= set(builtin_configs())
    for name in ("doorkey", "taxi", "grid2d", "fourrooms"):
        cfg = load_config(name)
        for key, value in DOMAIN_DEFAULTS[name].items():
            assert getattr(cfg.train, key) == pytest.approx(value), (name, key)
        assert cfg.data.steps == 150_000 and cfg.train.batch_size == 128
        assert cfg.seeds == [0, 1, 2, 3, 4]


def test_unknown_key_reports_line():
    text = "[run]\nenv = grid2d\n\n[train]\nlr = 1e-3\nlearning_rate = 2\n"
    with pytest.raises(ConfigError, match="learning_rate") as info:
        parse_config(text, path="x.cfg")
    assert info.value.line == 6 and "x.cfg:6" in str(info.value)


def test_unknown_section_and_bad_value():
    with pytest.raises(ConfigError, match="schedule") as info:
        parse_config(MINIMAL + "[schedule]\nwarmup = 3\n")
    assert info.value.line == 3
    with pytest.raises(ConfigError, match="epochs") as info:
        parse_config(MINIMAL + "[train]\nepochs = many\n")
    assert info.value.line == 4


def test_unknown_env_lists_choices():
    with pytest.raises(ConfigError, match="doorkey, fourrooms, grid2d, taxi"):
        parse_config("[run]\nenv = atari\n")


def test_key_before_section_is_rejected():
    with pytest.raises(ConfigError) as info:
        parse_config("env = grid2d\n")
    assert info.value.line == 1


def test_semantic_errors_surface_as_config_errors():
    with pytest.raises(ConfigError, match="batch_size"):
        parse_config(MINIMAL + "[train]\nbatch_size = 1\n")


def test_round_trip_through_text():
    cfg = parse_config("[run]\nenv = grid2d\nseeds = 3, 4\n[model]\nencoder = mlp\n"
                       "[train]\nno_fwd = true\nepochs = 7  # inline comment\n")
    back = parse_config(cfg.to_text())
    assert back.to_dict() == cfg.to_dict()
    assert back.seeds == [3, 4] and back.train.no_fwd and back.model.encoder == "mlp"


def test_every_field_has_a_default():
    cfg = RunConfig(env="fourrooms")
    assert cfg.model.latent_dim == 5 and cfg.train.epochs == 200 and cfg.eval.pairs == 5000


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "none.cfg")
