import pytest

from ncmrec.config import RunConfig


@pytest.fixture
def tiny_config():
    return RunConfig(
        embedding_dim=8,
        hidden=16,
        reward_hidden=8,
        batch_size=32,
        iterations=2,
        disc_steps=2,
        policy_steps=2,
        episodes_per_iteration=8,
        observational_episodes=20,
        eval_episodes=10,
        eval_every=1,
        n_items=10,
        ppo_epochs=2,
    )


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        passed, detail = results[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
