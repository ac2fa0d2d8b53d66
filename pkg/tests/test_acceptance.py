"""Acceptance criteria; each test records one PASS/FAIL line shown in the terminal summary."""
import math
import time

import numpy as np
import pytest

from conftest import record_criterion
from feedlearn.bandwidth import (
    BandwidthSchedule,
    PopulationSequence,
    bandwidth_learning_diagnostic,
    thinning_prob,
)
from feedlearn.beliefs import (
    bayesian_limit,
    bayesian_phi,
    bayesian_trajectory,
    expected_bayesian_phi,
    mislearning_probability,
    nonbayesian_rate,
    simulate_nonbayesian,
)
from feedlearn.cli import main
from feedlearn.experiment import (
    ExperimentConfig,
    RModel,
    bootstrap_fit_r,
    calibrate_sigma_eps,
    fit_r,
    generate_dataset,
    overcount_curve,
    overcount_mean,
)
from feedlearn.feed import sample_feed, thin_feed
from feedlearn.model import Population, SignalModel, kl_binary
from feedlearn.pricing import best_response, calibrate_price, foc_residual
from feedlearn.recall import asymptotic_recall

SYM = SignalModel.symmetric(0.75)


def _check(number, title, body):
    start = time.perf_counter()
    try:
        passed, detail = body()
    except Exception as exc:  # noqa: BLE001  a crash is a failed criterion
        passed, detail = False, f"raised {exc!r}"
    elapsed = time.perf_counter() - start
    record_criterion(number, title, passed, f"{detail}; {elapsed:.1f} s")
    assert passed, detail


def test_ergodic_recall_frequency():
    def body():
        start = time.perf_counter()
        pop = Population.from_signals([2.0, 1.0, 1.0], SYM, [1, 1, 0])
        hits = total = 0
        for k in range(100):
            rng = np.random.default_rng(k)
            traj = simulate_nonbayesian(sample_feed(pop, 500.0, rng), pop, 0.5, rng)
            h, t = traj.recall_frequency(1)
            hits, total = hits + h, total + t
        freq = hits / total
        target = asymptotic_recall(2.0, 4.0, 0.5)
        elapsed = time.perf_counter() - start
        ok = abs(freq - target) <= 0.02 and elapsed < 10
        return ok, f"frequency {freq:.4f} vs {target:.4f}"

    _check(1, "ergodic recall limit", body)


def test_nonbayesian_rate_matches_simulation():
    def body():
        start = time.perf_counter()
        pop = Population.from_signals([2.0, 1.0, 1.0], SYM, [1, 1, 0])
        horizon = 500.0
        slopes = []
        for k in range(200):
            rng = np.random.default_rng(1000 + k)
            slopes.append(simulate_nonbayesian(sample_feed(pop, horizon, rng), pop, 0.5, rng).final_phi / horizon)
        rate = nonbayesian_rate(pop, 0.5).rate
        rel = abs(np.mean(slopes) - rate) / abs(rate)
        elapsed = time.perf_counter() - start
        return rel < 0.05 and elapsed < 30, f"mean slope {np.mean(slopes):.4f} vs {rate:.4f}, rel err {rel:.4f}"

    _check(2, "non-Bayesian long-run rate", body)


def test_bayesian_saturation():
    def body():
        start = time.perf_counter()
        models = [SignalModel(0.75, 0.25), SignalModel(0.9, 0.5), SignalModel(0.7, 0.4)]
        pop = Population.from_signals([2.0, 1.0, 1.0], models, [1, 0, 1])
        rng = np.random.default_rng(3)
        notes, ok = [], True
        for t in (0.5, 1.0, 2.0):
            phis = np.array([bayesian_phi(sample_feed(pop, t, rng), pop) for _ in range(10_000)])
            se = phis.std(ddof=1) / math.sqrt(len(phis))
            z = abs(phis.mean() - expected_bayesian_phi(pop, t)) / se
            ok &= z < 3
            notes.append(f"t={t}: {z:.2f} SE")
        late = np.mean([bayesian_phi(sample_feed(pop, 50.0, rng), pop) for _ in range(10_000)])
        gap = abs(late - bayesian_limit(pop))
        ok &= gap < 1e-3
        elapsed = time.perf_counter() - start
        return ok and elapsed < 20, ", ".join(notes) + f", t=50 gap {gap:.1e}"

    _check(3, "Bayesian saturation", body)


def test_perfect_recall_reduction():
    def body():
        pop = Population.from_signals([2.0, 1.0, 1.0, 0.5], SYM, [1, 0, 1, 1])
        mismatches = 0
        for k in range(50):
            rng = np.random.default_rng(k)
            feed = sample_feed(pop, 25.0, rng)
            a = simulate_nonbayesian(feed, pop, 0.0, rng)
            b = bayesian_trajectory(feed, pop)
            mismatches += not (np.array_equal(a.phi, b.phi) and np.array_equal(a.times, b.times))
        return mismatches == 0, f"{mismatches} of 50 feeds differ"

    _check(4, "r = 0 equals Bayesian pointwise", body)


def test_mislearning_enumeration_vs_monte_carlo():
    def body():
        g = np.random.default_rng(2024)
        worst, ok = 0.0, True
        for n in range(1, 11):
            hi = g.uniform(0.55, 0.95, n)
            models = [SignalModel(float(p), float(g.uniform(0.05, p - 0.02))) for p in hi]
            rates = g.uniform(0.2, 3.0, n).tolist()
            r = float(g.uniform(0.05, 2.0))
            exact = mislearning_probability(models, rates, r, method="exact")
            mc = mislearning_probability(models, rates, r, method="mc", draws=100_000, rng=g)
            z = abs(exact.p_wrong - mc.p_wrong) / mc.se if mc.se > 0 else 0.0
            worst = max(worst, z)
            ok &= z <= 3
        single = mislearning_probability([SignalModel(0.75, 0.25)], [1.3], 0.7)
        ok &= abs(single.p_wrong - 0.25) < 1e-15
        return ok, f"worst gap {worst:.2f} SE over n = 1..10; n=1 p_wrong {single.p_wrong}"

    _check(5, "mislearning enumeration vs Monte Carlo", body)


def test_experiment_recovery():
    def body():
        start = time.perf_counter()
        r_true, n_part = 0.16, 1000
        sigma = calibrate_sigma_eps(0.07, r_true, n_part)
        covered, widths = 0, []
        for k in range(100):
            rows = generate_dataset(ExperimentConfig(num_participants=n_part, seed=k,
                                                     r_model=RModel(r_true, sigma_eps=sigma))).rows
            rows = rows[rows["known_question"] == 1]
            ci = bootstrap_fit_r(rows, reps=2000, seed=k)["r0"]
            covered += ci.covers(r_true)
            widths.append(ci.width)
        clean = generate_dataset(ExperimentConfig(num_participants=n_part, seed=0,
                                                  r_model=RModel(r_true, sigma_eps=0.0))).rows
        noiseless_err = abs(fit_r(clean).coefficients["r0"] - r_true)
        elapsed = time.perf_counter() - start
        ok = covered >= 93 and noiseless_err <= 1e-6 and elapsed < 120
        return ok, (f"coverage {covered}/100, mean width {np.mean(widths):.4f}, "
                    f"noiseless error {noiseless_err:.1e}")

    _check(6, "experiment recovery of r", body)


def test_overcount_curve_shape():
    def body():
        alphas = np.arange(1, 7)
        model = overcount_mean(alphas, 7 + alphas, 0.16)
        rows = generate_dataset(ExperimentConfig(num_participants=300, seed=1, n_totals=(8,),
                                                 r_model=RModel(0.16, sigma_eps=0.0))).rows
        curve = overcount_curve(rows, r=0.16, reps=50)
        increasing = bool(np.all(np.diff(model) > 0))
        concave = bool(np.all(np.diff(model, 2) < 0))
        overlay = np.allclose(curve["mean_Y"], model, atol=1e-12)
        at_six = float(model[-1])
        ok = increasing and concave and overlay and abs(at_six - 0.944) < 1e-3 and abs(at_six - 1.0) <= 0.3
        return ok, f"increasing={increasing}, concave={concave}, value at 6 = {at_six:.4f}"

    _check(7, "overcount curve shape", body)


def test_pricing_best_response():
    def body():
        worst_err = worst_foc = 0.0
        for n, B in ((4, 8.0), (10, 5.0), (50, 50.0)):
            for kind in ("linear", "quadratic"):
                price = calibrate_price(n, B, kind)
                worst_err = max(worst_err, abs(best_response(B, price, 1e-6) - B / n))
                worst_foc = max(worst_foc, foc_residual(B / n, B, price))
        return worst_err <= 1e-6 and worst_foc < 1e-8, f"max error {worst_err:.1e}, max FOC residual {worst_foc:.1e}"

    _check(8, "pricing calibration and best response", body)


def test_bandwidth_diagnostics():
    def body():
        grid = [10, 100, 1000, 10_000]
        stalled = bandwidth_learning_diagnostic(PopulationSequence(seed=0), BandwidthSchedule.constant(5.0), grid)
        a, B_bar, p = 1.5, 0.5, 0.8
        d = kl_binary(SignalModel.symmetric(p))
        linear = bandwidth_learning_diagnostic(PopulationSequence.homogeneous(a, p),
                                               BandwidthSchedule.linear(B_bar), grid)
        lin_err = max(abs(row["nonbayes_per_capita"] - B_bar * d) for row in linear.rows)

        pop = Population.from_signals([1.0, 2.0, 3.0], SignalModel.symmetric(0.7), [1, 1, 0])
        keep, thinned_rates = thinning_prob(2.4, pop)
        direct_pop = Population.from_signals(thinned_rates, SignalModel.symmetric(0.7), [1, 1, 0])
        g = np.random.default_rng(17)
        reps, horizon = 5000, 5.0
        thinned = np.array([len(thin_feed(sample_feed(pop, horizon, g), keep, g)) for _ in range(reps)])
        direct = np.array([len(sample_feed(direct_pop, horizon, g)) for _ in range(reps)])
        mu = 2.4 * horizon
        z_mean = abs(thinned.mean() - direct.mean()) / math.sqrt(2 * mu / reps)
        z_var = abs(thinned.var(ddof=1) - direct.var(ddof=1)) / math.sqrt(2 * (mu + 2 * mu**2) / reps)
        ok = stalled.verdict == "stalled" and lin_err <= 1e-9 and z_mean < 3 and z_var < 3
        return ok, (f"constant schedule '{stalled.verdict}', linear per-capita error {lin_err:.1e}, "
                    f"thinning mean {z_mean:.2f} SE, variance {z_var:.2f} SE")

    _check(9, "bandwidth diagnostics", body)


def test_cli_determinism(tmp_path):
    def body():
        differing = []
        for command in ("simulate", "sweep", "experiment", "pricing", "bandwidth"):
            snapshots = []
            for k, threads in enumerate(("1", "1", "4")):
                out = tmp_path / command / str(k)
                code = main([command, "--seed", "11", "--out", str(out), "--threads", threads])
                if code != 0:
                    return False, f"{command} exited with {code}"
                snapshots.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
            if not snapshots[0] == snapshots[1] == snapshots[2]:
                differing.append(command)
        return not differing, "all commands byte-identical" if not differing else f"differ: {differing}"

    _check(10, "CLI determinism across runs and threads", body)


@pytest.fixture(autouse=True)
def _quiet_cli(capsys):
    yield
    capsys.readouterr()
