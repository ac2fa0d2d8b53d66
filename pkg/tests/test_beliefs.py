import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from feedlearn.beliefs import (
    bayesian_limit,
    bayesian_phi,
    bayesian_trajectory,
    expected_bayesian_phi,
    influence_weights,
    mislearning_probability,
    nonbayesian_rate,
    sender_influence,
    simulate_nonbayesian,
)
from feedlearn.errors import DomainError
from feedlearn.feed import Feed, sample_feed
from feedlearn.model import Population, SignalModel
from feedlearn.recall import RecallState, record_message, sample_recall

SYM = SignalModel.symmetric(0.75)
LOG3 = math.log(3)


def _pop(rates, signals, model=SYM):
    return Population.from_signals(rates, model, signals)


def test_bayesian_phi_dedups():
    pop = _pop([1.0], [1])
    feed = Feed(np.arange(1.0, 8.0), np.ones(7, dtype=int), np.ones(7, dtype=int), 10.0)
    assert bayesian_phi(feed, pop) == pytest.approx(LOG3)
    assert bayesian_trajectory(feed, pop).phi.tolist() == pytest.approx([LOG3] * 7)
    assert bayesian_phi(Feed.empty(10.0), pop) == 0.0


def test_bayesian_phi_saturates_to_limit(rng):
    pop = _pop([5.0, 5.0, 5.0], [1, 0, 1])
    feed = sample_feed(pop, 20.0, rng)
    assert bayesian_phi(feed, pop) == pytest.approx(bayesian_limit(pop))


def test_bayesian_limit_values():
    assert bayesian_limit(_pop([1.0], [1])) == pytest.approx(1.0986, abs=1e-4)
    assert bayesian_limit(_pop([1.0, 3.0], [1, 0])) == pytest.approx(0.0, abs=1e-15)


def test_expected_bayesian_phi():
    pop = _pop([1.0, 2.0], [1, 1])
    assert expected_bayesian_phi(pop, 0.0) == 0.0
    assert expected_bayesian_phi(pop, 1e6) == pytest.approx(bayesian_limit(pop), abs=1e-6)
    with pytest.raises(DomainError):
        expected_bayesian_phi(pop, -1.0)


def test_expected_bayesian_phi_monte_carlo():
    pop = _pop([1.0, 2.0], [1, 0], SignalModel(0.9, 0.5))
    rng = np.random.default_rng(31)
    phis = np.array([bayesian_phi(sample_feed(pop, 1.0, rng), pop) for _ in range(10_000)])
    se = phis.std(ddof=1) / np.sqrt(len(phis))
    assert abs(phis.mean() - expected_bayesian_phi(pop, 1.0)) < 3 * se


def test_r_zero_matches_bayesian(rng):
    pop = _pop([2.0, 1.0, 1.0], [1, 0, 1])
    for _ in range(10):
        feed = sample_feed(pop, 30.0, rng)
        a = simulate_nonbayesian(feed, pop, 0.0, rng)
        b = bayesian_trajectory(feed, pop)
        np.testing.assert_array_equal(a.phi, b.phi)


def test_single_sender_counts_only_unrecalled(rng):
    pop = _pop([3.0], [1])
    traj = simulate_nonbayesian(sample_feed(pop, 20.0, rng), pop, 0.7, rng)
    # alone, the sender is always recalled after its first message
    assert traj.final_phi == pytest.approx(LOG3)
    assert traj.recall_frequency(1)[0] == len(traj.phi) - 1


def test_walk_equals_vectorised_simulation():
    pop = _pop([2.0, 1.0, 0.5], [1, 0, 1])
    feed = sample_feed(pop, 40.0, np.random.default_rng(1))
    fast = simulate_nonbayesian(feed, pop, 0.4, np.random.default_rng(77))
    rng = np.random.default_rng(77)
    state, phi, walk = RecallState(), 0.0, []
    for m in feed.messages:
        if not sample_recall(state, m.source_id, 0.4, rng):
            phi += pop.llrs[m.source_id - 1]
        state = record_message(state, m.source_id)
        walk.append(phi)
    np.testing.assert_allclose(fast.phi, walk, rtol=0, atol=1e-12)


def test_trajectory_csv(rng):
    pop = _pop([1.0], [0])
    text = bayesian_trajectory(sample_feed(pop, 5.0, rng), pop).to_csv()
    lines = text.splitlines()
    assert lines[0] == "time,phi,mu1"
    if len(lines) > 1:
        t, phi, mu = map(float, lines[1].split(","))
        assert mu == pytest.approx(1 / (1 + math.exp(-phi)))


def test_nonbayesian_rate_cases():
    pop = _pop([2.0, 1.0, 1.0], [1, 0, 1])
    assert nonbayesian_rate(pop, 0.0).rate == 0.0
    n, a = 6, 1.5
    homo = _pop([a] * n, [1] * n)
    assert nonbayesian_rate(homo, 1.0).rate == pytest.approx((n - 1) * a * LOG3)
    big = nonbayesian_rate(pop, 1e12).per_sender_terms
    np.testing.assert_allclose(big, pop.rates * pop.llrs, rtol=1e-9)


@given(st.lists(st.floats(0.1, 10.0), min_size=1, max_size=8), st.floats(0.0, 5.0), st.data())
def test_rate_decomposes_into_influence(rates, r, data):
    signals = data.draw(st.lists(st.integers(0, 1), min_size=len(rates), max_size=len(rates)))
    pop = _pop(rates, signals)
    summary = nonbayesian_rate(pop, r)
    parts = [sender_influence(i, pop, r) * pop.llrs[i - 1] for i in range(1, len(rates) + 1)]
    assert summary.rate == pytest.approx(sum(summary.per_sender_terms), abs=1e-12)
    np.testing.assert_allclose(summary.per_sender_terms, parts, rtol=1e-12, atol=1e-15)


def test_influence_examples():
    B = 10.0
    pop = _pop([3.0, 4.0, 3.0], [1, 1, 1])
    assert sender_influence(1, pop, 1.0) == pytest.approx(3.0 * (1 - 3.0 / B))
    assert sender_influence(1, _pop([2.0], [1]), 0.8) == 0.0
    high = _pop([6.0] + [1.0] * 7, [1] * 8)
    assert sender_influence(1, high, 0.16) == pytest.approx(6 * (1 - 6 / 7.12))
    assert sender_influence(1, high, 0.16) == pytest.approx(0.944, abs=1e-3)
    with pytest.raises(DomainError):
        sender_influence(9, high, 0.16)


def test_rate_change_acts_directly_and_through_total():
    base = _pop([1.0, 1.0, 1.0], [1, 0, 1])
    louder = _pop([3.0, 1.0, 1.0], [1, 0, 1])
    a = nonbayesian_rate(base, 0.5).per_sender_terms
    b = nonbayesian_rate(louder, 0.5).per_sender_terms
    assert b[0] != pytest.approx(a[0])
    assert abs(b[1]) > abs(a[1]) and abs(b[2]) > abs(a[2])


def test_beliefs_diverge_while_bayesian_stays_bounded():
    pop = _pop([2.0, 1.0, 1.0], [1, 1, 0])
    rate = nonbayesian_rate(pop, 0.5).rate
    assert rate > 0
    finals = {}
    for horizon in (100.0, 200.0, 400.0):
        runs = []
        for k in range(20):
            g = np.random.default_rng(k)
            feed = sample_feed(pop, horizon, g)
            runs.append(simulate_nonbayesian(feed, pop, 0.5, g).final_phi)
            assert abs(bayesian_phi(feed, pop)) <= np.abs(pop.llrs).sum()
        finals[horizon] = np.mean(runs)
    assert finals[200.0] > 1.5 * finals[100.0] and finals[400.0] > 1.5 * finals[200.0]


def test_sign_consistency():
    pop = _pop([2.0, 1.0, 1.0], [0, 1, 1])
    rate = nonbayesian_rate(pop, 0.5).rate
    signs = []
    for k in range(40):
        g = np.random.default_rng(k)
        signs.append(np.sign(simulate_nonbayesian(sample_feed(pop, 500.0, g), pop, 0.5, g).final_phi))
    assert np.mean(np.array(signs) == np.sign(rate)) >= 0.95


def test_mislearning_single_sender():
    res = mislearning_probability([SYM], [1.0], 0.5)
    assert res.p_wrong == pytest.approx(0.25)
    assert res.p_tie == 0.0


def test_mislearning_two_symmetric_senders_tie_on_disagreement():
    res = mislearning_probability([SYM, SYM], [1.0, 1.0], 1.0)
    assert res.p_tie == pytest.approx(2 * 0.75 * 0.25)
    assert res.p_wrong == pytest.approx(0.25 ** 2)


def test_mislearning_three_senders_oracle():
    # majority of three wrong signals at accuracy 0.8: 3 * 0.8 * 0.2**2 + 0.2**3
    res = mislearning_probability([SignalModel.symmetric(0.8)] * 3, [1.0] * 3, 1.0)
    assert res.p_wrong == pytest.approx(0.104, abs=1e-12)
    assert res.p_wrong + res.p_correct + res.p_tie == pytest.approx(1.0)


@settings(max_examples=10, deadline=None)
@given(st.integers(1, 7), st.integers(0, 2**32 - 1))
def test_mislearning_exact_agrees_with_monte_carlo(n, seed):
    g = np.random.default_rng(seed)
    hi = g.uniform(0.55, 0.95, n)
    models = [SignalModel(float(p), float(g.uniform(0.05, p - 0.02))) for p in hi]
    rates = g.uniform(0.2, 3.0, n).tolist()
    r = float(g.uniform(0.05, 2.0))
    exact = mislearning_probability(models, rates, r, method="exact")
    mc = mislearning_probability(models, rates, r, method="mc", draws=20_000, rng=g)
    assert abs(exact.p_wrong - mc.p_wrong) <= 3 * mc.se + 1e-12


def test_mislearning_errors():
    with pytest.raises(DomainError):
        mislearning_probability([SYM], [1.0], 0.0)
    with pytest.raises(DomainError):
        mislearning_probability([SYM] * 21, [1.0] * 21, 1.0, method="exact")
    with pytest.raises(DomainError):
        mislearning_probability([SYM], [1.0, 2.0], 1.0)


def test_influence_weights_vector():
    w = influence_weights([2.0, 1.0, 1.0], 0.5)
    np.testing.assert_allclose(w, [2 * (1 - 2 / 3), 1 * (1 - 1 / 2.5), 1 * (1 - 1 / 2.5)])
