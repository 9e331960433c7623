import pytest

from ncmrec.config import ConfigError, RunConfig


def test_defaults_match_reference_settings():
    c = RunConfig()
    assert (c.gamma, c.batch_size, c.window, c.gae_lambda, c.clip_eps) == (0.7, 256, 10, 0.97, 0.2)
    assert (c.reward_temperature, c.action_temperature) == (0.2, 0.2)
    assert (c.actor_lr, c.critic_lr) == (1e-4, 1e-3)
    assert (c.embedding_dim, c.heads, c.blocks, c.embedding_std, c.hidden) == (50, 1, 1, 0.02, 512)


def test_text_round_trip_is_identity():
    c = RunConfig(gamma=0.123456789, optimizer="td", td_supervised=True, dataset="/tmp/x y.csv", seed=7)
    assert RunConfig.from_text(c.to_text()) == c
    assert RunConfig.from_text(RunConfig().to_text()).to_text() == RunConfig().to_text()


def test_comments_and_blank_lines_are_ignored():
    c = RunConfig.from_text("# run\n\ngamma = 0.5  # short horizon\noptimizer = ppo\n")
    assert c.gamma == 0.5 and c.optimizer == "ppo"


@pytest.mark.parametrize(
    "text, message",
    [
        ("gama = 0.5\n", "unknown"),
        ("gamma 0.5\n", "line 1"),
        ("batch_size = 2.5\n", "batch_size"),
        ("optimizer = sarsa\n", "reinforce, td, ppo"),
        ("gamma = 1.5\n", "gamma"),
        ("reward_temperature = 0\n", "reward_temperature"),
        ("embedding_dim = 50\nheads = 3\n", "heads"),
        ("td_supervised = maybe\n", "td_supervised"),
    ],
)
def test_invalid_configs_rejected(text, message):
    with pytest.raises(ConfigError, match=message):
        RunConfig.from_text(text)


def test_unknown_mapping_keys_rejected():
    with pytest.raises(ConfigError):
        RunConfig.from_mapping({"learning_rate": 0.1})


def test_int_literal_accepted_for_float_field():
    assert RunConfig.from_text("gamma = 1\n").gamma == 1.0
    assert isinstance(RunConfig(gamma=1).gamma, float)
