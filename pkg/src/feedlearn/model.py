"""Binary-state world, sender signal models and population aggregates.

Every quantity is in natural-log units. A population is built once and its
signals are never re-drawn: repeated transmissions carry the same content.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from feedlearn.errors import DomainError

PROB_EPS = 1e-12


def _check_prob(name: str, p: float) -> None:
    if not (PROB_EPS <= p <= 1.0 - PROB_EPS) or math.isnan(p):
        raise DomainError(f"{name}={p!r} must lie in [{PROB_EPS}, 1 - {PROB_EPS}]")


def check_state(theta: int) -> int:
    if theta not in (0, 1):
        raise DomainError(f"world state must be 0 or 1, got {theta!r}")
    return int(theta)


@dataclass(frozen=True)
class SignalModel:
    """Bernoulli signal with P(s = theta) = p_hi > P(s = 1 - theta) = p_lo."""

    p_hi: float
    p_lo: float

    def __post_init__(self) -> None:
        _check_prob("p_hi", self.p_hi)
        _check_prob("p_lo", self.p_lo)
        if not self.p_lo < self.p_hi:
            raise DomainError(
                f"signal is not informative: p_lo={self.p_lo} must be < p_hi={self.p_hi}"
            )

    @classmethod
    def symmetric(cls, p: float) -> SignalModel:
        return cls(p, 1.0 - p)


@dataclass(frozen=True)
class LlrWeights:
    lambda_hi: float
    lambda_lo: float


def llr_weights(model: SignalModel) -> LlrWeights:
    """Log-likelihood ratio carried by a signal of 1 (``lambda_hi``) and of 0."""
    return LlrWeights(
        lambda_hi=math.log(model.p_hi / model.p_lo),
        lambda_lo=math.log((1.0 - model.p_hi) / (1.0 - model.p_lo)),
    )


def kl_binary(model: SignalModel) -> float:
    """Relative entropy D(p_hi || p_lo) between the two signal distributions, in nats."""
    p, q = model.p_hi, model.p_lo
    return p * math.log(p / q) + (1.0 - p) * math.log((1.0 - p) / (1.0 - q))


def sample_signal(model: SignalModel, theta: int, rng: np.random.Generator) -> int:
    """Draw one private signal; it equals ``theta`` with probability ``p_hi``."""
    theta = check_state(theta)
    return theta if rng.random() < model.p_hi else 1 - theta


@dataclass(frozen=True)
class Sender:
    id: int
    rate: float
    signal_model: SignalModel
    signal: int

    def __post_init__(self) -> None:
        if not self.rate > 0 or not math.isfinite(self.rate):
            raise DomainError(f"sender {self.id}: rate must be positive and finite, got {self.rate}")
        if self.signal not in (0, 1):
            raise DomainError(f"sender {self.id}: signal must be 0 or 1, got {self.signal}")

    @property
    def weights(self) -> LlrWeights:
        return llr_weights(self.signal_model)


def signal_llr(sender: Sender) -> float:
    w = sender.weights
    return w.lambda_hi if sender.signal == 1 else w.lambda_lo


@dataclass(frozen=True)
class Population:
    """Ordered senders with ids 1..n, plus the true state."""

    senders: tuple[Sender, ...]
    theta: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "senders", tuple(self.senders))
        check_state(self.theta)
        ids = [s.id for s in self.senders]
        if ids != list(range(1, len(ids) + 1)):
            raise DomainError(f"sender ids must be 1..n in order, got {ids}")

    @classmethod
    def from_signals(
        cls,
        rates: Sequence[float],
        models: Sequence[SignalModel] | SignalModel,
        signals: Sequence[int],
        theta: int = 1,
    ) -> Population:
        if isinstance(models, SignalModel):
            models = [models] * len(rates)
        if not len(rates) == len(models) == len(signals):
            raise DomainError("rates, models and signals must have equal length")
        senders = tuple(
            Sender(i + 1, float(a), m, int(s))
            for i, (a, m, s) in enumerate(zip(rates, models, signals))
        )
        return cls(senders, theta)

    @classmethod
    def sample(
        cls,
        rates: Sequence[float],
        models: Sequence[SignalModel] | SignalModel,
        theta: int,
        rng: np.random.Generator,
    ) -> Population:
        """Realize every sender's signal once, in sender order."""
        if isinstance(models, SignalModel):
            models = [models] * len(rates)
        signals = [sample_signal(m, theta, rng) for m in models]
        return cls.from_signals(rates, models, signals, theta)

    def __len__(self) -> int:
        return len(self.senders)

    @cached_property
    def rates(self) -> np.ndarray:
        return np.array([s.rate for s in self.senders], dtype=float)

    @cached_property
    def signals(self) -> np.ndarray:
        return np.array([s.signal for s in self.senders], dtype=int)

    @cached_property
    def llrs(self) -> np.ndarray:
        """Realized log-likelihood contribution of each sender."""
        return np.array([signal_llr(s) for s in self.senders], dtype=float)

    @cached_property
    def kl(self) -> np.ndarray:
        return np.array([kl_binary(s.signal_model) for s in self.senders], dtype=float)

    @property
    def total_rate(self) -> float:
        return float(self.rates.sum())

    def sender(self, sender_id: int) -> Sender:
        if not 1 <= sender_id <= len(self.senders):
            raise DomainError(f"unknown sender id {sender_id}")
        return self.senders[sender_id - 1]
