"""Log-belief-ratio dynamics for a perfect-recall and an interference-limited receiver."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from feedlearn.errors import DomainError
from feedlearn.feed import Feed
from feedlearn.model import Population, SignalModel, llr_weights
from feedlearn.recall import prior_counts, recall_probability

EXACT_MAX_SENDERS = 20
_ENUM_BLOCK = 1 << 16


@dataclass(frozen=True)
class BeliefTrajectory:
    """phi = log(mu(1)/mu(0)) recorded right after every message arrival.

    ``sources`` and ``recalled`` (when set) give each message's sender and
    whether that sender was recalled, i.e. the message was discounted.
    """

    times: np.ndarray
    phi: np.ndarray
    sources: np.ndarray | None = None
    recalled: np.ndarray | None = None

    @property
    def samples(self) -> list[tuple[float, float]]:
        return list(zip(self.times.tolist(), self.phi.tolist()))

    @property
    def final_phi(self) -> float:
        return float(self.phi[-1]) if len(self.phi) else 0.0

    def recall_frequency(self, sender_id: int) -> tuple[int, int]:
        """(recalled, total) messages of ``sender_id``."""
        if self.recalled is None:
            raise DomainError("trajectory carries no recall record")
        mine = self.sources == sender_id
        return int(self.recalled[mine].sum()), int(mine.sum())

    def to_csv(self) -> str:
        buf = io.StringIO()
        write_trajectory_csv(self, buf)
        return buf.getvalue()


def write_trajectory_csv(traj: BeliefTrajectory, fh, header: str | None = None) -> None:
    if header:
        fh.write(header)
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["time", "phi", "mu1"])
    mu1 = 1.0 / (1.0 + np.exp(-traj.phi))
    for t, p, m in zip(traj.times.tolist(), traj.phi.tolist(), mu1.tolist()):
        w.writerow([repr(t), repr(p), repr(m)])


def _message_llrs(feed: Feed, population: Population) -> np.ndarray:
    if len(feed) == 0:
        return np.empty(0)
    if feed.sources.min() < 1 or feed.sources.max() > len(population):
        raise DomainError("feed contains a source that is not in the population")
    return population.llrs[feed.sources - 1]


def bayesian_trajectory(feed: Feed, population: Population) -> BeliefTrajectory:
    """Perfect recall: each sender's signal counts once, at its first arrival."""
    first = prior_counts(feed.sources)[0] == 0
    increments = np.where(first, _message_llrs(feed, population), 0.0)
    return BeliefTrajectory(feed.times.copy(), np.cumsum(increments), feed.sources.copy(), ~first)


def bayesian_phi(feed: Feed, population: Population) -> float:
    seen = np.unique(feed.sources)
    return float(population.llrs[seen - 1].sum()) if len(seen) else 0.0


def expected_bayesian_phi(population: Population, t: float) -> float:
    """E[phi_t | signals] = sum_i lambda_i (1 - exp(-alpha_i t))."""
    if t < 0:
        raise DomainError(f"time must be non-negative, got {t}")
    return float(np.sum(population.llrs * -np.expm1(-population.rates * t)))


def bayesian_limit(population: Population) -> float:
    return float(population.llrs.sum())


def simulate_nonbayesian(
    feed: Feed, population: Population, r: float, rng: np.random.Generator
) -> BeliefTrajectory:
    """Walk the feed; a message moves the belief only if its source is not recalled.

    One uniform is consumed per message, in feed order, so the result matches
    a message-by-message walk with ``sample_recall``/``record_message``.
    """
    if r < 0:
        raise DomainError(f"interference strength must be non-negative, got {r}")
    own, other = prior_counts(feed.sources)
    p = recall_probability(own, other, r)
    recalled = rng.random(len(feed)) < p
    increments = np.where(recalled, 0.0, _message_llrs(feed, population))
    return BeliefTrajectory(feed.times.copy(), np.cumsum(increments), feed.sources.copy(), recalled)


def influence_weights(rates, r: float) -> np.ndarray:
    """alpha_i (1 - alpha_i / (alpha_i + r (alpha_bar - alpha_i))) for every sender."""
    if r < 0:
        raise DomainError(f"interference strength must be non-negative, got {r}")
    a = np.asarray(rates, dtype=float)
    others = a.sum() - a
    return a * (r * others) / (a + r * others)


@dataclass(frozen=True)
class RateSummary:
    rate: float
    per_sender_terms: tuple[float, ...]


def nonbayesian_rate(population: Population, r: float) -> RateSummary:
    """Long-run slope of phi_t for an interference-limited receiver."""
    terms = influence_weights(population.rates, r) * population.llrs
    return RateSummary(float(terms.sum()), tuple(terms.tolist()))


def sender_influence(sender_id: int, population: Population, r: float) -> float:
    population.sender(sender_id)
    return float(influence_weights(population.rates, r)[sender_id - 1])


@dataclass(frozen=True)
class MislearningResult:
    p_wrong: float
    p_correct: float
    p_tie: float
    se: float = 0.0
    method: str = "exact"


def _limit_direction(lam: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Sign of the long-run belief for each row of realised log-likelihoods.

    The slope decides; where it vanishes the belief stays bounded and the
    once-counted signals decide. Only if both vanish is the outcome a tie.
    """
    slope = lam @ w
    level = lam.sum(axis=1)
    slope_tol = 1e-12 * max(float(np.abs(w).sum() * np.abs(lam).max(initial=0.0)), 1e-300)
    level_tol = 1e-12 * max(float(np.abs(lam).sum(axis=1).max(initial=0.0)), 1e-300)
    direction = np.where(np.abs(slope) > slope_tol, np.sign(slope), 0.0)
    fallback = np.where(np.abs(level) > level_tol, np.sign(level), 0.0)
    return np.where(direction == 0.0, fallback, direction)


def mislearning_probability(
    signal_models: Sequence[SignalModel],
    rates: Sequence[float],
    r: float,
    *,
    method: str = "auto",
    draws: int = 100_000,
    rng: np.random.Generator | None = None,
) -> MislearningResult:
    """Ex-ante probability that the belief concentrates on the wrong state, states equally likely.

    ``method="exact"`` enumerates all 2**n signal vectors per state;
    ``"mc"`` samples (state, signals) pairs and reports a standard error.
    ``"auto"`` switches to Monte Carlo above ``EXACT_MAX_SENDERS`` senders.
    """
    n = len(signal_models)
    if n == 0 or n != len(rates):
        raise DomainError("need one rate per signal model and at least one sender")
    if not r > 0:
        raise DomainError(f"interference strength must be positive, got {r}")
    weights = [llr_weights(m) for m in signal_models]
    lam_hi = np.array([w.lambda_hi for w in weights])
    lam_lo = np.array([w.lambda_lo for w in weights])
    p_hi = np.array([m.p_hi for m in signal_models])
    p_lo = np.array([m.p_lo for m in signal_models])
    w = influence_weights(rates, r)

    if method == "auto":
        method = "exact" if n <= EXACT_MAX_SENDERS else "mc"
    if method == "exact":
        if n > EXACT_MAX_SENDERS:
            raise DomainError(f"exact enumeration supports at most {EXACT_MAX_SENDERS} senders")
        return _mislearning_exact(lam_hi, lam_lo, p_hi, p_lo, w)
    if method == "mc":
        rng = rng if rng is not None else np.random.default_rng()
        return _mislearning_mc(lam_hi, lam_lo, p_hi, p_lo, w, draws, rng)
    raise DomainError(f"unknown method {method!r}")


def _mislearning_exact(lam_hi, lam_lo, p_hi, p_lo, w) -> MislearningResult:
    n = len(w)
    # P(direction < 0 | theta=1), P(direction > 0 | theta=0), and ties per state
    wrong = np.zeros(2)
    tie = np.zeros(2)
    bits = np.arange(n)
    for start in range(0, 1 << n, _ENUM_BLOCK):
        codes = np.arange(start, min(start + _ENUM_BLOCK, 1 << n))
        s = ((codes[:, None] >> bits) & 1).astype(bool)
        direction = _limit_direction(np.where(s, lam_hi, lam_lo), w)
        prob1 = np.prod(np.where(s, p_hi, 1.0 - p_hi), axis=1)
        prob0 = np.prod(np.where(s, p_lo, 1.0 - p_lo), axis=1)
        wrong[1] += prob1[direction < 0].sum()
        wrong[0] += prob0[direction > 0].sum()
        tie[1] += prob1[direction == 0].sum()
        tie[0] += prob0[direction == 0].sum()
    p_wrong = 0.5 * wrong.sum()
    p_tie = 0.5 * tie.sum()
    return MislearningResult(p_wrong, 1.0 - p_wrong - p_tie, p_tie)


def _mislearning_mc(lam_hi, lam_lo, p_hi, p_lo, w, draws, rng) -> MislearningResult:
    theta = rng.random(draws) < 0.5
    p_one = np.where(theta[:, None], p_hi, p_lo)
    s = rng.random((draws, len(w))) < p_one
    direction = _limit_direction(np.where(s, lam_hi, lam_lo), w)
    is_wrong = np.where(theta, direction < 0, direction > 0)
    is_tie = direction == 0
    p_wrong = float(is_wrong.mean())
    p_tie = float(is_tie.mean())
    se = float(np.sqrt(p_wrong * (1.0 - p_wrong) / draws))
    return MislearningResult(p_wrong, 1.0 - p_wrong - p_tie, p_tie, se, "mc")
