"""Interference-based recall of message sources.

A sender with ``m`` earlier messages, competing with ``T`` earlier messages
from everybody else, is recalled with probability ``m / (m + r*T)``.
Counts are always strictly prior to the message being judged.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

import numpy as np

from feedlearn.errors import DomainError


def recall_probability(own_count, other_count, r):
    """Probability of recalling a source; array-aware.

    ``0/0`` (no prior message from the source and no effective interference)
    resolves to 0: a first exposure is never "remembered".
    """
    m = np.asarray(own_count, dtype=float)
    t = np.asarray(other_count, dtype=float)
    r = np.asarray(r, dtype=float)
    if np.any(m < 0) or np.any(t < 0) or np.any(r < 0):
        raise DomainError("counts and interference strength must be non-negative")
    denom = m + r * t
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(denom > 0, m / np.where(denom > 0, denom, 1.0), 0.0)
    return float(p) if p.ndim == 0 else p


def asymptotic_recall(alpha_i: float, alpha_bar: float, r: float) -> float:
    """Long-run recall probability of a sender transmitting at ``alpha_i`` out of ``alpha_bar``."""
    if not alpha_i > 0:
        raise DomainError(f"sender rate must be positive, got {alpha_i}")
    if alpha_i > alpha_bar * (1 + 1e-12):
        raise DomainError(f"sender rate {alpha_i} exceeds total rate {alpha_bar}")
    if r < 0:
        raise DomainError(f"interference strength must be non-negative, got {r}")
    return alpha_i / (alpha_i + r * max(alpha_bar - alpha_i, 0.0))


@dataclass(frozen=True)
class RecallState:
    """Per-source counts of messages seen so far. Immutable; updates return a new state."""

    counts: Mapping[int, int] = field(default_factory=dict)
    total: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "counts", MappingProxyType(dict(self.counts)))
        if any(c < 0 for c in self.counts.values()):
            raise DomainError("counts must be non-negative")
        if sum(self.counts.values()) != self.total:
            raise DomainError("total must equal the sum of per-source counts")

    def own(self, source_id: int) -> int:
        return self.counts.get(source_id, 0)

    def probability(self, source_id: int, r: float) -> float:
        own = self.own(source_id)
        return recall_probability(own, self.total - own, r)


def record_message(state: RecallState, source_id: int) -> RecallState:
    counts = dict(state.counts)
    counts[source_id] = counts.get(source_id, 0) + 1
    return RecallState(counts, state.total + 1)


def sample_recall(state: RecallState, source_id: int, r: float, rng: np.random.Generator) -> bool:
    """Draw whether ``source_id`` is recalled given ``state``; consumes one uniform."""
    return bool(rng.random() < state.probability(source_id, r))


def prior_counts(sources: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """For each position in a source sequence, the strictly-prior (own, other) counts.

    Vectorised equivalent of folding ``record_message`` over the sequence.
    """
    sources = np.asarray(sources)
    n = len(sources)
    own = np.zeros(n, dtype=np.int64)
    if n:
        order = np.argsort(sources, kind="stable")
        sorted_src = sources[order]
        starts = np.r_[0, np.flatnonzero(np.diff(sorted_src)) + 1]
        run_start = np.repeat(starts, np.diff(np.r_[starts, n]))
        own[order] = np.arange(n) - run_start
    other = np.arange(n) - own
    return own, other
