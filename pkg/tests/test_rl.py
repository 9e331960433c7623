import itertools

import numpy as np
import pytest
import torch

from gradcheck_util import directional_errors
from ncmrec.encoder import DTYPE
from ncmrec.policy import PolicyNet
from ncmrec.rl import (
    Critic,
    Transitions,
    discounted_returns,
    gae_advantages,
    ppo_clip_objective,
    reinforce_gradient,
    reinforce_surrogate,
    td_loss,
    td_update,
)
from ncmrec.scm import noise_stream


def test_discounted_returns_hand_case():
    np.testing.assert_allclose(discounted_returns([1, 1, 1], 0.5), [1.75, 1.5, 1.0])
    np.testing.assert_allclose(discounted_returns([0, 0, 2], 1.0), [2, 2, 2])
    assert discounted_returns([3.0], 0.7).tolist() == [3.0]


def brute_force_gae(r, v, gamma, lam):
    T = len(r)
    out = []
    for t in range(T):
        total = 0.0
        for l in range(T - t):
            delta = r[t + l] + gamma * v[t + l + 1] - v[t + l]
            total += (gamma * lam) ** l * delta
        out.append(total)
    return np.array(out)


def test_gae_matches_double_sum():
    rng = np.random.default_rng(0)
    for _ in range(50):
        r, v = rng.standard_normal(5), rng.standard_normal(6)
        gamma, lam = rng.uniform(0, 1, size=2)
        np.testing.assert_allclose(gae_advantages(r, v, gamma, lam), brute_force_gae(r, v, gamma, lam), rtol=0, atol=1e-10)


def test_gae_endpoints():
    r, v = np.array([1.0, 0.5, 2.0]), np.array([0.3, 0.2, 0.9, 0.4])
    gamma = 0.7
    # lam = 0: one-step TD errors
    np.testing.assert_allclose(gae_advantages(r, v, gamma, 0.0), r + gamma * v[1:] - v[:-1])
    # lam = 1: discounted return with bootstrap minus baseline
    mc = discounted_returns(np.append(r, v[-1]), gamma)[:-1]
    np.testing.assert_allclose(gae_advantages(r, v, gamma, 1.0), mc - v[:-1])
    # missing bootstrap value means a terminal next state
    np.testing.assert_allclose(gae_advantages(r, v[:-1], gamma, 0.5), gae_advantages(r, np.append(v[:-1], 0.0), gamma, 0.5))
    with pytest.raises(ValueError):
        gae_advantages([], [], gamma, 0.5)
    with pytest.raises(ValueError):
        gae_advantages(r, v[:2], gamma, 0.5)


@pytest.mark.parametrize(
    "ratio, adv, expected",
    [
        (1.0, 2.0, 2.0),
        (1.5, 2.0, 2.4),  # clipped at 1.2
        (0.5, 2.0, 1.0),  # unclipped side is smaller
        (1.5, -2.0, -3.0),  # unclipped side is smaller
        (0.5, -2.0, -1.6),  # clipped at 0.8
        (1.1, -1.0, -1.1),
    ],
)
def test_ppo_clip_hand_cases(ratio, adv, expected):
    out = ppo_clip_objective(torch.tensor([ratio], dtype=DTYPE), torch.tensor([adv], dtype=DTYPE), 0.2)
    assert out.item() == pytest.approx(expected, rel=0, abs=1e-15)


def test_ppo_clip_rejects_non_positive_ratio():
    with pytest.raises(ValueError):
        ppo_clip_objective(torch.tensor([0.0]), torch.tensor([1.0]), 0.2)


def chain_mdp():
    """States 0..2. Action 0 moves right (leaving state 2 pays 1 and ends); action 1 stays and pays 0.2."""
    trans = []
    for s in range(3):
        trans.append((s, 0, 1.0 if s == 2 else 0.0, min(s + 1, 2), s == 2))
        trans.append((s, 1, 0.2, s, False))
    return trans


def value_iteration(trans, gamma, sweeps=500):
    v = np.zeros(3)
    for _ in range(sweeps):
        q = np.full((3, 2), -np.inf)
        for s, a, r, s2, term in trans:
            q[s, a] = r + (0.0 if term else gamma * v[s2])
        v = q.max(1)
    return v


def test_td_learning_matches_value_iteration_on_chain():
    gamma = 0.5
    trans = chain_mdp()
    v_star = value_iteration(trans, gamma)
    np.testing.assert_allclose(v_star, [0.4, 0.5, 1.0], atol=1e-12)
    eye = torch.eye(3, dtype=DTYPE)
    q_table = torch.zeros(3, 2, dtype=DTYPE, requires_grad=True)
    batch = Transitions(
        eye[[t[0] for t in trans]],
        torch.tensor([t[1] for t in trans]),
        torch.tensor([t[2] for t in trans], dtype=DTYPE),
        eye[[t[3] for t in trans]],
        torch.tensor([t[4] for t in trans]),
    )
    opt = torch.optim.SGD([q_table], lr=1.0)
    for _ in range(300):
        td_update(batch, lambda s: s @ q_table, gamma, opt)
    v = q_table.detach().max(1).values.numpy()
    assert np.max(np.abs(v - v_star)) <= 1e-2


def test_td_target_ignores_bootstrap_on_terminal_and_is_not_differentiated():
    q_table = torch.tensor([[1.0, 2.0], [5.0, 3.0]], dtype=DTYPE, requires_grad=True)
    eye = torch.eye(2, dtype=DTYPE)
    batch = Transitions(eye[[0, 0]], torch.tensor([0, 1]), torch.tensor([0.0, 1.0], dtype=DTYPE), eye[[1, 1]], torch.tensor([False, True]))
    loss = td_loss(batch, lambda s: s @ q_table, 0.5)
    # targets: 0 + 0.5 * 5 = 2.5 and 1 (terminal)
    assert loss.item() == pytest.approx(((2.5 - 1.0) ** 2 + (1.0 - 2.0) ** 2) / 2)
    (grad,) = torch.autograd.grad(loss, q_table)
    assert torch.all(grad[1] == 0)


def test_reinforce_bandit_converges_to_best_arm():
    policy = PolicyNet(1, 2, hidden=16, seed=0)
    state = torch.ones(1, 1, dtype=DTYPE)
    arms = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=DTYPE)
    rewards = np.array([1.0, 0.0])
    opt = torch.optim.Adam(policy.parameters(), lr=0.05)
    rng = noise_stream(0, 17)
    for _ in range(2000):
        logp = policy.log_prob(state, arms)[0]
        a = int(rng.choice(2, p=logp.exp().detach().numpy()))
        loss = -reinforce_surrogate(logp[a : a + 1], torch.tensor([rewards[a]], dtype=DTYPE), 1)
        opt.zero_grad()
        loss.backward()
        opt.step()
    assert policy.log_prob(state, arms)[0, 0].exp().item() >= 0.99


def test_reinforce_estimator_is_unbiased_on_two_step_mdp():
    """Exact gradient of expected undiscounted return by enumeration vs the sampled estimator."""
    theta = torch.tensor([[0.3, -0.2], [0.1, 0.4]], dtype=DTYPE, requires_grad=True)
    reward = torch.tensor([[1.0, 0.0], [0.2, 2.0]], dtype=DTYPE)  # reward[state, action]; next state = action

    def expected_return():
        p0 = torch.softmax(theta[0], 0)
        total = 0.0
        for a0 in range(2):
            p1 = torch.softmax(theta[a0], 0)
            total = total + p0[a0] * (reward[0, a0] + (p1 * reward[a0]).sum())
        return total

    (exact,) = torch.autograd.grad(expected_return(), theta)
    rng = noise_stream(5)
    n = 20_000
    samples = []
    for _ in range(n):
        logp0 = torch.log_softmax(theta[0], 0)
        a0 = int(rng.random() < logp0[1].exp().item())
        logp1 = torch.log_softmax(theta[a0], 0)
        a1 = int(rng.random() < logp1[1].exp().item())
        rets = discounted_returns([reward[0, a0].item(), reward[a0, a1].item()], 1.0)
        (g,) = reinforce_gradient([theta], torch.stack([logp0[a0], logp1[a1]]), torch.as_tensor(rets), 1)
        samples.append(g.numpy().ravel())
    samples = np.array(samples)
    mean, se = samples.mean(0), samples.std(0, ddof=1) / np.sqrt(n)
    assert np.all(np.abs(mean - exact.numpy().ravel()) <= 4 * se + 1e-12)


def test_reinforce_surrogate_rejects_impossible_actions():
    with pytest.raises(FloatingPointError):
        reinforce_surrogate(torch.tensor([-np.inf]), torch.tensor([1.0]), 1)


def test_critic_shapes():
    s = torch.randn(4, 5, dtype=DTYPE)
    assert Critic(5, 0, hidden=7)(s).shape == (4,)
    assert Critic(5, 3, hidden=7)(s, torch.randn(6, 3, dtype=DTYPE)).shape == (4, 6)


@pytest.mark.parametrize("action_dim", [0, 3])
def test_critic_gradients_match_finite_differences(action_dim):
    critic = Critic(5, action_dim, hidden=9, seed=action_dim)
    gen = torch.Generator().manual_seed(action_dim)
    s = torch.randn(4, 5, dtype=DTYPE, generator=gen, requires_grad=True)
    a = torch.randn(6, 3, dtype=DTYPE, generator=gen, requires_grad=True) if action_dim else None
    params = [*critic.parameters(), s] + ([a] if a is not None else [])
    out = lambda: (critic(s, a) ** 2).sum()
    assert directional_errors(out, params, action_dim).max() <= 1e-4
