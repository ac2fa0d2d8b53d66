"""Learning-rate benchmarks as the sender population grows under a bandwidth cap.

Signals are averaged out, so each sender enters through its rate and the
relative entropy of its signal distributions. Limits in n are checked on
finite grids: a sequence "diverges" when every step multiplies it by at
least ``DIVERGENCE_RATIO``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from feedlearn.beliefs import influence_weights
from feedlearn.errors import DomainError
from feedlearn.model import Population, SignalModel

DIVERGENCE_RATIO = 1.5


def expected_bayesian_phi_marginal(population: Population, t: float) -> float:
    if t < 0:
        raise DomainError(f"time must be non-negative, got {t}")
    return float(np.sum(population.kl * -np.expm1(-population.rates * t)))


def bayesian_rate_per_capita(population: Population, t: float, rates=None) -> float:
    """(1/n) sum_i D_i (1 - exp(-alpha_i t)); ``rates`` overrides the population's (e.g. thinned)."""
    if not t > 0:
        raise DomainError(f"time must be positive, got {t}")
    a = population.rates if rates is None else np.asarray(rates, dtype=float)
    return float(np.mean(population.kl * -np.expm1(-a * t)))


def bayesian_benchmark(population: Population) -> float:
    return float(population.kl.mean())


def nonbayesian_benchmark(population: Population) -> float:
    return float(np.mean(population.rates * population.kl))


def nonbayesian_rate_marginal(population: Population, r: float) -> float:
    """Signal-averaged long-run slope of the interference-limited belief."""
    return float(np.sum(influence_weights(population.rates, r) * population.kl))


@dataclass(frozen=True)
class BandwidthSchedule:
    """Total delivered message rate B_n as a function of population size."""

    B_of_n: Callable[[int], float]
    name: str = "custom"

    def __call__(self, n: int) -> float:
        return float(self.B_of_n(n))

    @classmethod
    def constant(cls, B: float) -> BandwidthSchedule:
        return cls(lambda n: B, f"constant({B})")

    @classmethod
    def linear(cls, B_bar: float) -> BandwidthSchedule:
        return cls(lambda n: B_bar * n, f"linear({B_bar})")

    @classmethod
    def power(cls, c: float, exponent: float) -> BandwidthSchedule:
        return cls(lambda n: c * n ** exponent, f"power({c},{exponent})")

    @classmethod
    def parse(cls, text: str) -> BandwidthSchedule:
        """``constant:B``, ``linear:B_bar``, ``sqrt:c`` or ``power:c,k``."""
        kind, _, args = text.partition(":")
        try:
            vals = [float(v) for v in args.split(",")] if args else []
        except ValueError as exc:
            raise DomainError(f"bad schedule {text!r}") from exc
        if kind == "constant" and len(vals) == 1:
            return cls.constant(vals[0])
        if kind == "linear" and len(vals) == 1:
            return cls.linear(vals[0])
        if kind == "sqrt" and len(vals) == 1:
            return cls.power(vals[0], 0.5)
        if kind == "power" and len(vals) == 2:
            return cls.power(*vals)
        raise DomainError(f"bad schedule {text!r}")


def thinning_prob(schedule: BandwidthSchedule | float, population: Population) -> tuple[float, np.ndarray]:
    """Keep probability B_n / alpha_bar_n and the per-sender delivered rates."""
    B = schedule(len(population)) if callable(schedule) else float(schedule)
    total = population.total_rate
    if not 0 < B < total:
        raise DomainError(f"bandwidth {B} must lie strictly between 0 and the total rate {total}")
    p = B / total
    return p, p * population.rates


@dataclass(frozen=True)
class PopulationSequence:
    """Nested populations: population(n) is the first n senders of population(n + 1).

    Rates are uniform on ``rate_range``; each sender's p_hi is uniform on
    ``p_hi_range`` with p_lo = 1 - p_hi unless ``p_lo_range`` is given.
    Independent seeded streams per attribute keep prefixes stable.
    """

    rate_range: tuple[float, float] = (0.5, 1.5)
    p_hi_range: tuple[float, float] = (0.6, 0.9)
    p_lo_range: tuple[float, float] | None = None
    theta: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        lo, hi = self.rate_range
        if not 0 < lo <= hi:
            raise DomainError(f"bad rate range {self.rate_range}")

    @classmethod
    def homogeneous(cls, rate: float, p_hi: float, p_lo: float | None = None, seed: int = 0) -> PopulationSequence:
        p_lo = 1.0 - p_hi if p_lo is None else p_lo
        return cls((rate, rate), (p_hi, p_hi), (p_lo, p_lo), seed=seed)

    @property
    def alpha_bar(self) -> float:
        """Limit of alpha_bar_n / n, the mean sender rate."""
        return 0.5 * (self.rate_range[0] + self.rate_range[1])

    def _draw(self, stream: int, n: int, bounds: tuple[float, float]) -> np.ndarray:
        lo, hi = bounds
        if lo == hi:
            return np.full(n, float(lo))
        rng = np.random.default_rng([self.seed, stream])
        return rng.uniform(lo, hi, size=n)

    def population(self, n: int) -> Population:
        if n < 1:
            raise DomainError(f"population size must be positive, got {n}")
        rates = self._draw(0, n, self.rate_range)
        p_hi = self._draw(1, n, self.p_hi_range)
        p_lo = 1.0 - p_hi if self.p_lo_range is None else self._draw(2, n, self.p_lo_range)
        u = np.random.default_rng([self.seed, 3]).random(n)
        signals = np.where(u < p_hi, self.theta, 1 - self.theta)
        models = [SignalModel(float(a), float(b)) for a, b in zip(p_hi, p_lo)]
        return Population.from_signals(rates, models, signals, self.theta)


@dataclass(frozen=True)
class DiagnosticTable:
    rows: list[dict]
    verdict: str


def _diverges(values: Sequence[float]) -> bool:
    return len(values) >= 2 and all(
        b > 0 and a > 0 and b / a >= DIVERGENCE_RATIO for a, b in zip(values, values[1:])
    )


def _vanishes(values: Sequence[float]) -> bool:
    return len(values) >= 2 and all(
        a > 0 and b / a <= 1.0 / DIVERGENCE_RATIO for a, b in zip(values, values[1:])
    )


def bandwidth_learning_diagnostic(
    sequence: PopulationSequence,
    schedule: BandwidthSchedule,
    n_grid: Sequence[int],
    horizon_factor: float = 1.0,
) -> DiagnosticTable:
    """Thinned learning rates on a grid of population sizes.

    ``nonbayes_rate`` is p_n * sum_i alpha_i D_i, the signal-averaged slope
    of an interference-limited (r = 1, large n) receiver behind the cap;
    ``bayes_rate`` is the Bayesian per-capita rate after the horizon
    t_n = horizon_factor * (n / B_n) * log n, which grows faster than n / B_n.
    """
    n_grid = list(n_grid)
    if not n_grid or any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise DomainError("n_grid must be non-empty and strictly ascending")
    rows = []
    for n in n_grid:
        pop = sequence.population(n)
        B = schedule(n)
        p, thinned = thinning_prob(B, pop)
        t_n = horizon_factor * (n / B) * math.log(max(n, 2))
        total = p * float(np.sum(pop.rates * pop.kl))
        rows.append({
            "n": n,
            "B_n": B,
            "p_n": p,
            "t_n": t_n,
            "bayes_rate": bayesian_rate_per_capita(pop, t_n, rates=thinned),
            "bayes_benchmark": bayesian_benchmark(pop),
            "nonbayes_rate": total,
            "nonbayes_per_capita": total / n,
        })
    totals = [row["nonbayes_rate"] for row in rows]
    per_capita = [row["nonbayes_per_capita"] for row in rows]
    if not _diverges(totals):
        verdict = "stalled"
    elif _vanishes(per_capita):
        verdict = "learning (sub-exponential in n)"
    else:
        verdict = "learning (exponential in n)"
    for row in rows:
        row["verdict"] = verdict
    return DiagnosticTable(rows, verdict)
