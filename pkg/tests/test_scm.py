import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ncmrec.scm import (
    CategoricalMechanism,
    CounterfactualQuery,
    InestimableEvidence,
    SCMError,
    StructuralCausalModel,
    counterfactual_distribution,
    gumbel_max_select,
    gumbel_noise,
    noise_stream,
    probability_of_necessity,
    reward_scm,
    softmax,
    verify_gumbel_consistency,
)


def _sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def binary_joint(p, q):
    """Exact shared-noise joint for two binary Gumbel-max worlds.

    With shared noise, R = 0 iff L = g0 - g1 > log(p1/p0), and L is standard
    logistic, so every cell is a difference of logistic CDF values.
    """
    a = math.log(p[1] / p[0])
    b = math.log(q[1] / q[0])
    lo, hi = min(a, b), max(a, b)
    both0 = 1 - _sigmoid(hi)
    both1 = _sigmoid(lo)
    middle = _sigmoid(hi) - _sigmoid(lo)
    if a < b:  # factual 0 while counterfactual 1 on the middle band
        return np.array([[both0, middle], [0.0, both1]])
    return np.array([[both0, 0.0], [middle, both1]])


def test_gumbel_max_select_trivial_cases():
    assert gumbel_max_select([0.0, 0.0], [1.2, 0.3]) == 0
    assert gumbel_max_select([math.log(0.9), math.log(0.1)], [0.0, 0.0]) == 0


def test_gumbel_max_select_ties_go_to_lowest_index():
    assert gumbel_max_select([1.0, 1.0, 1.0], [0.0, 0.0, 0.0]) == 0
    assert gumbel_max_select([0.0, 2.0, 2.0], [0.0, 0.0, 0.0]) == 1


def test_gumbel_max_select_errors():
    with pytest.raises(SCMError):
        gumbel_max_select([0.0, 1.0], [0.0])
    with pytest.raises(SCMError):
        gumbel_max_select([0.0, np.inf], [0.0, 0.0])
    with pytest.raises(SCMError):
        gumbel_max_select([], [])


def test_gumbel_marginal_binary():
    rng = noise_stream(3, 0)
    logits = np.log([0.3, 0.7])
    picks = gumbel_max_select(np.broadcast_to(logits, (10**6, 2)), gumbel_noise(rng, (10**6, 2)))
    assert abs(np.mean(picks == 1) - 0.7) <= 0.005


def test_gumbel_marginal_chi_square():
    from scipy import stats

    logits = np.array([0.3, -1.2, 0.8, 0.0])
    n = 10**6
    picks = gumbel_max_select(np.broadcast_to(logits, (n, 4)), gumbel_noise(noise_stream(11, 0), (n, 4)))
    observed = np.bincount(picks, minlength=4)
    _, p = stats.chisquare(observed, softmax(logits) * n)
    assert p > 1e-3


def test_gumbel_noise_is_reproducible_and_finite():
    a = gumbel_noise(noise_stream(5, 1, 2), (1000, 3))
    b = gumbel_noise(noise_stream(5, 1, 2), (1000, 3))
    assert np.array_equal(a, b)
    assert np.all(np.isfinite(a))
    assert not np.array_equal(a, gumbel_noise(noise_stream(5, 1, 3), (1000, 3)))


def test_counterfactual_identity_intervention_matches_observational():
    p = np.log([0.2, 0.5, 0.3])
    model = reward_scm(p, p)
    query = CounterfactualQuery([{"A": 0}], ["R"])
    table = counterfactual_distribution(model, query, 200_000, seed=1)
    np.testing.assert_allclose(table, softmax(p), atol=0.005)


def test_identical_worlds_put_all_mass_on_diagonal():
    p = np.log([0.2, 0.5, 0.3])
    model = reward_scm(p, p)
    query = CounterfactualQuery([{"A": 0}, {"A": 1}], ["R", "R"])
    table = counterfactual_distribution(model, query, 50_000, seed=2)
    assert np.trace(table) == pytest.approx(1.0, abs=0.0)


def test_binary_counterfactual_joint_matches_closed_form():
    p, q = (0.9, 0.1), (0.6, 0.4)
    expected = binary_joint(p, q)
    np.testing.assert_allclose(expected, [[0.6, 0.3], [0.0, 0.1]], atol=1e-12)
    model = reward_scm(np.log(p), np.log(q))
    query = CounterfactualQuery([{"A": 0}, {"A": 1}], ["R", "R"])
    table = counterfactual_distribution(model, query, 10**6, seed=3)
    np.testing.assert_allclose(table, expected, atol=0.003)


def test_probability_of_necessity_binary():
    model = reward_scm(np.log([0.9, 0.1]), np.log([0.6, 0.4]))
    pn = probability_of_necessity(model, ({"A": 0}, ("R", 0)), ({"A": 1}, ("R", 1)), 10**6, seed=4)
    # 0.3 / 0.9 from the closed form
    assert pn == pytest.approx(1 / 3, abs=0.003)


def test_probability_of_necessity_identical_mechanism_is_one():
    p = np.log([0.7, 0.3])
    model = reward_scm(p, p)
    assert probability_of_necessity(model, ({"A": 0}, ("R", 0)), ({"A": 1}, ("R", 0)), 10_000, seed=0) == 1.0


def test_probability_of_necessity_zero_under_ratio_condition():
    # q/p ratio favours class 0 over class 2, so observing 0 rules out 2
    p = np.log([0.5, 0.3, 0.2])
    q = np.log([0.6, 0.3, 0.1])
    model = reward_scm(p, q)
    assert probability_of_necessity(model, ({"A": 0}, ("R", 0)), ({"A": 1}, ("R", 2)), 200_000, seed=5) == 0.0


def test_inestimable_evidence():
    model = reward_scm([0.0, -80.0], [0.0, 0.0])
    with pytest.raises(InestimableEvidence):
        probability_of_necessity(model, ({"A": 0}, ("R", 1)), ({"A": 1}, ("R", 0)), 1000, seed=0)


def test_query_validation():
    model = reward_scm([0.0, 0.0], [0.0, 0.0])
    with pytest.raises(SCMError):
        counterfactual_distribution(model, CounterfactualQuery([{"Z": 0}], ["R"]), 10, 0)
    with pytest.raises(SCMError):
        counterfactual_distribution(model, CounterfactualQuery([{"A": 0}], ["R"]), 0, 0)
    with pytest.raises(SCMError):
        counterfactual_distribution(model, CounterfactualQuery([], []), 10, 0)


def test_cyclic_graph_rejected():
    m = CategoricalMechanism(np.zeros((2, 2)))
    with pytest.raises(SCMError):
        StructuralCausalModel(["X", "Y"], {"X": ["Y"], "Y": ["X"]}, {"X": m, "Y": m})


def test_parent_shape_mismatch_rejected():
    with pytest.raises(SCMError):
        StructuralCausalModel(
            ["X", "Y"],
            {"X": [], "Y": ["X"]},
            {"X": CategoricalMechanism(np.zeros(3)), "Y": CategoricalMechanism(np.zeros((2, 2)))},
        )


def test_chain_model_evidence_and_text_roundtrip():
    model = StructuralCausalModel(
        ["S", "A", "R"],
        {"S": [], "A": ["S"], "R": ["S", "A"]},
        {
            "S": CategoricalMechanism(np.log([0.5, 0.5])),
            "A": CategoricalMechanism(np.log([[0.8, 0.2], [0.3, 0.7]])),
            "R": CategoricalMechanism(np.log([[[0.9, 0.1], [0.4, 0.6]], [[0.5, 0.5], [0.2, 0.8]]])),
        },
    )
    again = StructuralCausalModel.from_text(model.to_text())
    assert again.nodes == model.nodes and again.parents == model.parents
    for v in model.nodes:
        np.testing.assert_array_equal(again.mechanisms[v].logits, model.mechanisms[v].logits)
    query = CounterfactualQuery([{"A": 0}, {"A": 1}], ["R", "R"], evidence=[(0, "S", 1)])
    t1 = counterfactual_distribution(model, query, 20_000, seed=9)
    t2 = counterfactual_distribution(again, query, 20_000, seed=9)
    np.testing.assert_array_equal(t1, t2)
    assert t1.sum() == pytest.approx(1.0)


def test_text_format_errors_carry_line_numbers():
    with pytest.raises(SCMError, match="line 2"):
        StructuralCausalModel.from_text("node R 2\nbogus line\n")


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-4, 4), min_size=2, max_size=5), st.integers(0, 2**31 - 1))
def test_counterfactual_evaluation_is_deterministic(logits, seed):
    model = reward_scm(logits, logits[::-1])
    noise = model.draw_noise(500, seed)
    a = model.evaluate(noise, {"A": 1})
    b = model.evaluate(noise, {"A": 1})
    assert np.array_equal(a["R"], b["R"])
    # identical mechanisms on shared noise never disagree
    same = reward_scm(logits, logits)
    n2 = same.draw_noise(500, seed)
    assert np.array_equal(same.evaluate(n2, {"A": 0})["R"], same.evaluate(n2, {"A": 1})["R"])


def test_verify_identical_logits_consistent():
    p = np.log([0.2, 0.3, 0.5])
    rep = verify_gumbel_consistency(p, p, 100_000, seed=0)
    assert rep.consistent
    off = rep.pn[~np.eye(3, dtype=bool)]
    assert np.all(off == 0.0)
    np.testing.assert_array_equal(np.diag(rep.pn), 1.0)


def test_verify_random_pairs_have_no_violations():
    rng = np.random.default_rng(17)
    for trial in range(40):
        d = int(rng.integers(2, 6))
        rep = verify_gumbel_consistency(rng.standard_normal(d), rng.standard_normal(d), 50_000, seed=trial)
        assert rep.violations == 0 and rep.contrapositive_violations == 0


def test_verify_independent_noise_contrast_finds_violations():
    rep = verify_gumbel_consistency(np.log([0.5, 0.5]), np.log([0.6, 0.4]), 100_000, seed=1, shared_noise=False)
    assert rep.antecedent_holds
    assert rep.violations > 0 and not rep.consistent


def test_verify_length_mismatch():
    with pytest.raises(SCMError):
        verify_gumbel_consistency([0.0, 1.0], [0.0, 1.0, 2.0], 10, 0)
