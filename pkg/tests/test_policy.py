import math

import numpy as np
import pytest
import torch

from gradcheck_util import directional_errors
from ncmrec.encoder import DTYPE
from ncmrec.policy import PolicyNet, act, policy_distribution, score_action, top_k
from ncmrec.scm import gumbel_noise, noise_stream


def net(seed=0, **kw):
    args = dict(state_dim=4, action_dim=3, hidden=8, temperature=0.2, seed=seed)
    args.update(kw)
    return PolicyNet(**args)


def test_zero_output_weights_give_uniform_policy():
    p = net()
    with torch.no_grad():
        p.w_out.zero_()
    lp = p.log_prob(torch.randn(2, 4, dtype=DTYPE), torch.randn(5, 3, dtype=DTYPE))
    torch.testing.assert_close(lp, torch.full((2, 5), -math.log(5), dtype=DTYPE))
    # softplus(0) = ln 2 for every action
    torch.testing.assert_close(p.scores(torch.zeros(1, 4, dtype=DTYPE), torch.zeros(2, 3, dtype=DTYPE)), torch.full((1, 2), math.log(2), dtype=DTYPE))


def test_scores_match_formula():
    p = net(1)
    s, a = torch.randn(4, dtype=DTYPE), torch.randn(3, dtype=DTYPE)
    expected = torch.nn.functional.softplus(p.w_out @ torch.relu(p.w_state @ s + p.w_action @ a + p.b))
    torch.testing.assert_close(score_action(s, 0, p, a[None]), expected)


def test_log_scores_are_stable_for_very_negative_preactivations():
    p = net(2)
    with torch.no_grad():
        p.w_out.fill_(-50.0)
        p.b.fill_(10.0)
    ls = p.log_scores(torch.zeros(1, 4, dtype=DTYPE), torch.zeros(3, 3, dtype=DTYPE))
    assert torch.all(torch.isfinite(ls))
    assert torch.all(ls < -100)


def test_relaxed_policy_is_invariant_to_scaling_scores():
    log_h = torch.log(torch.tensor([0.5, 2.0, 1.0], dtype=DTYPE))
    noise = torch.from_numpy(gumbel_noise(noise_stream(0), (3,)))
    a = policy_distribution(log_h, noise, 0.2)
    b = policy_distribution(log_h + math.log(7.0), noise, 0.2)
    torch.testing.assert_close(a, b)
    with pytest.raises(ValueError):
        policy_distribution(log_h, noise, 0.0)


def test_selection_frequencies_follow_score_ratio():
    n = 200_000
    log_h = torch.log(torch.tensor([[1.0, 3.0]], dtype=DTYPE)).expand(n, 2)
    picks = act(log_h, "sample", rng=noise_stream(1))
    assert abs(np.mean(picks == 1) - 0.75) <= 0.01
    # the relaxed vector's argmax is the same draw at any temperature
    noise = torch.from_numpy(gumbel_noise(noise_stream(2), (n, 2)))
    relaxed = policy_distribution(log_h, noise, 1e-3).argmax(-1).numpy()
    assert abs(np.mean(relaxed == 1) - 0.75) <= 0.01


def test_top_k_orders_and_breaks_ties_by_lower_id():
    assert top_k(np.array([0.1, 0.9, 0.5, 0.9]), 3).tolist() == [1, 3, 2]
    assert top_k(torch.tensor([[1.0, 1.0, 1.0]]), 2).tolist() == [[0, 1]]
    with pytest.raises(ValueError):
        top_k(np.zeros(3), 4)
    with pytest.raises(ValueError):
        top_k(np.zeros(3), 0)


def test_act_modes():
    values = torch.tensor([[0.0, 2.0, 1.0]], dtype=DTYPE)
    assert act(values, "top_k", k=2).tolist() == [[1, 2]]
    with pytest.raises(ValueError):
        act(values, "sample")
    with pytest.raises(ValueError):
        act(values, "greedy")
    a1 = act(values.expand(50, 3), "sample", rng=noise_stream(9))
    a2 = act(values.expand(50, 3), "sample", rng=noise_stream(9))
    assert np.array_equal(a1, a2)


@pytest.mark.parametrize("seed", range(3))
def test_policy_gradients_match_finite_differences(seed):
    p = net(seed)
    gen = torch.Generator().manual_seed(seed)
    s = torch.randn(3, 4, dtype=DTYPE, generator=gen, requires_grad=True)
    a = torch.randn(6, 3, dtype=DTYPE, generator=gen, requires_grad=True)
    chosen = torch.tensor([0, 4, 2])
    noise = torch.from_numpy(gumbel_noise(noise_stream(seed), (3, 6)))
    params = [*p.parameters(), s, a]
    assert directional_errors(lambda: p.log_prob(s, a)[torch.arange(3), chosen].sum(), params, seed).max() <= 1e-4
    w = torch.randn(3, 6, dtype=DTYPE, generator=gen)
    assert directional_errors(lambda: (p.distribution(s, a, noise) * w).sum(), params, seed).max() <= 1e-4
