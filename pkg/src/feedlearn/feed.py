"""Poisson message feeds: per-sender arrivals, superposition and thinning."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

from feedlearn.errors import DomainError
from feedlearn.model import Population


class Message(NamedTuple):
    time: float
    source_id: int
    content: int


@dataclass(frozen=True)
class Feed:
    """Time-ordered messages observed before ``horizon``.

    Stored column-wise; ``messages`` gives the row view. Equal times are
    ordered by ascending source id.
    """

    times: np.ndarray
    sources: np.ndarray
    contents: np.ndarray
    horizon: float

    def __post_init__(self) -> None:
        if not self.horizon > 0:
            raise DomainError(f"horizon must be positive, got {self.horizon}")
        n = len(self.times)
        if len(self.sources) != n or len(self.contents) != n:
            raise DomainError("feed columns must have equal length")
        if n and (self.times[0] <= 0 or self.times[-1] >= self.horizon):
            raise DomainError("message times must lie in (0, horizon)")
        dt = np.diff(self.times)
        if np.any(dt < 0) or np.any((dt == 0) & (np.diff(self.sources) <= 0)):
            raise DomainError("messages must be ordered by time, ties by ascending sender id")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def messages(self) -> Iterator[Message]:
        for t, s, c in zip(self.times.tolist(), self.sources.tolist(), self.contents.tolist()):
            yield Message(t, s, c)

    @classmethod
    def empty(cls, horizon: float) -> Feed:
        return cls(np.empty(0), np.empty(0, dtype=int), np.empty(0, dtype=int), horizon)

    def subset(self, mask: np.ndarray) -> Feed:
        return Feed(self.times[mask], self.sources[mask], self.contents[mask], self.horizon)

    def to_csv(self) -> str:
        buf = io.StringIO()
        write_feed_csv(self, buf)
        return buf.getvalue()


def sample_arrivals(rate: float, horizon: float, rng: np.random.Generator) -> np.ndarray:
    """Event times of a homogeneous Poisson process on the open interval (0, horizon).

    Gaps are drawn as exponentials in blocks sized a few standard deviations
    above the expected count, so almost always a single block suffices.
    """
    if rate < 0 or not math.isfinite(rate):
        raise DomainError(f"rate must be a finite non-negative number, got {rate}")
    if not horizon > 0:
        raise DomainError(f"horizon must be positive, got {horizon}")
    if rate == 0:
        return np.empty(0)
    mean = rate * horizon
    block = int(mean + 6.0 * math.sqrt(mean) + 16)
    times = np.cumsum(rng.exponential(1.0 / rate, size=block))
    while times[-1] < horizon:
        more = times[-1] + np.cumsum(rng.exponential(1.0 / rate, size=block))
        times = np.concatenate([times, more])
    return times[: np.searchsorted(times, horizon, side="left")]


def sample_feed(population: Population, horizon: float, rng: np.random.Generator) -> Feed:
    """Superpose every sender's arrival process; senders are sampled in id order."""
    if not horizon > 0:
        raise DomainError(f"horizon must be positive, got {horizon}")
    if len(population) == 0:
        return Feed.empty(horizon)
    times, sources, contents = [], [], []
    for s in population.senders:
        t = sample_arrivals(s.rate, horizon, rng)
        times.append(t)
        sources.append(np.full(len(t), s.id, dtype=int))
        contents.append(np.full(len(t), s.signal, dtype=int))
    times = np.concatenate(times)
    sources = np.concatenate(sources)
    contents = np.concatenate(contents)
    order = np.lexsort((sources, times))
    return Feed(times[order], sources[order], contents[order], horizon)


def thin_feed(feed: Feed, keep_prob: float, rng: np.random.Generator) -> Feed:
    """Drop each message independently with probability ``1 - keep_prob``."""
    if not 0.0 <= keep_prob <= 1.0:
        raise DomainError(f"keep probability must lie in [0, 1], got {keep_prob}")
    keep = rng.random(len(feed)) < keep_prob
    return feed.subset(keep)


def write_feed_csv(feed: Feed, fh, header: str | None = None) -> None:
    if header:
        fh.write(header)
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["time", "source_id", "content"])
    for m in feed.messages:
        w.writerow([repr(m.time), m.source_id, m.content])


def read_feed_csv(fh, horizon: float) -> Feed:
    rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    if not rows or rows[0] != ["time", "source_id", "content"]:
        raise DomainError("feed CSV must start with header time,source_id,content")
    body = rows[1:]
    return Feed(
        np.array([float(r[0]) for r in body]),
        np.array([int(r[1]) for r in body], dtype=int),
        np.array([int(r[2]) for r in body], dtype=int),
        horizon,
    )
