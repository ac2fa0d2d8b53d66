"""Rate pricing for senders who compete for a receiver's attention (r = 1)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from feedlearn.errors import DomainError, NumericError
from feedlearn.optimize import golden_section, grid_then_golden

KINDS = ("linear", "quadratic", "tabulated")


@dataclass(frozen=True)
class PriceFunction:
    """Price charged for transmitting at a given rate.

    ``linear``: c * a; ``quadratic``: c * a**2; ``tabulated``: piecewise-linear
    through ``table`` = ((a0, p0), (a1, p1), ...) with a0 = 0, p0 = 0.
    """

    kind: str
    coefficient: float = 0.0
    table: tuple[tuple[float, float], ...] = field(default=())

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise DomainError(f"unknown price kind {self.kind!r}")
        if self.kind == "tabulated":
            if len(self.table) < 2:
                raise DomainError("a tabulated price needs at least two points")
            xs = [a for a, _ in self.table]
            ps = [p for _, p in self.table]
            if xs[0] != 0.0 or ps[0] != 0.0:
                raise DomainError("a tabulated price must start at (0, 0)")
            if any(b <= a for a, b in zip(xs, xs[1:])) or any(q < p for p, q in zip(ps, ps[1:])):
                raise DomainError("tabulated rates must increase and prices must not decrease")
        elif self.coefficient < 0:
            raise DomainError(f"price coefficient must be non-negative, got {self.coefficient}")

    @classmethod
    def free(cls) -> PriceFunction:
        return cls("linear", 0.0)

    def __call__(self, alpha):
        a = np.asarray(alpha, dtype=float)
        if self.kind == "linear":
            out = self.coefficient * a
        elif self.kind == "quadratic":
            out = self.coefficient * a * a
        else:
            xs, ps = zip(*self.table)
            out = np.interp(a, xs, ps, right=np.nan)
        return float(out) if out.ndim == 0 else out

    def derivative(self, alpha: float) -> float:
        if self.kind == "linear":
            return self.coefficient
        if self.kind == "quadratic":
            return 2.0 * self.coefficient * alpha
        xs, ps = zip(*self.table)
        k = min(max(int(np.searchsorted(xs, alpha, side="right")) - 1, 0), len(xs) - 2)
        return (ps[k + 1] - ps[k]) / (xs[k + 1] - xs[k])


@dataclass(frozen=True)
class PricingGame:
    n: int
    B: float
    price: PriceFunction

    def __post_init__(self) -> None:
        if self.n < 2:
            raise DomainError(f"a pricing game needs at least two senders, got {self.n}")
        if not self.B > 0:
            raise DomainError(f"bandwidth must be positive, got {self.B}")

    @property
    def symmetric_rate(self) -> float:
        return self.B / self.n


def sender_utility(alpha_i, alpha_bar_minus_i, price: PriceFunction):
    """Influence share a * A / (A + a) of a sender facing total rate A from the others, minus price."""
    a = np.asarray(alpha_i, dtype=float)
    rest = np.asarray(alpha_bar_minus_i, dtype=float)
    if np.any(a < 0) or np.any(rest < 0):
        raise DomainError("rates must be non-negative")
    if np.any((a == 0) & (rest == 0)):
        raise DomainError("utility is undefined when nobody transmits")
    out = a * rest / (rest + a) - price(a)
    return float(out) if np.ndim(out) == 0 else out


def sender_utility_fixed_B(alpha_i, B: float, price: PriceFunction):
    """a (B - a) / B - p(a): utility when the platform pins the total rate at ``B``."""
    a = np.asarray(alpha_i, dtype=float)
    if not B > 0:
        raise DomainError(f"bandwidth must be positive, got {B}")
    if np.any(a < 0) or np.any(a > B):
        raise DomainError(f"rate must lie in [0, {B}]")
    out = a * (B - a) / B - price(a)
    return float(out) if np.ndim(out) == 0 else out


def calibrate_price(n: int, B: float, kind: str) -> PriceFunction:
    """Price whose first-order condition puts every sender at B / n."""
    if n < 2:
        raise DomainError(f"calibration needs n >= 2, got {n}")
    if not B > 0:
        raise DomainError(f"bandwidth must be positive, got {B}")
    if kind == "linear":
        return PriceFunction("linear", 1.0 - 2.0 / n)
    if kind == "quadratic":
        return PriceFunction("quadratic", (n - 2) / (2.0 * B))
    raise DomainError(f"calibration is defined for linear and quadratic prices, not {kind!r}")


def foc_residual(alpha: float, B: float, price: PriceFunction) -> float:
    """|d/da utility| at ``alpha`` under fixed bandwidth."""
    return abs(1.0 - 2.0 * alpha / B - price.derivative(alpha))


def best_response(B: float, price: PriceFunction, tol: float = 1e-6) -> float:
    """Rate in [0, B] maximising the fixed-bandwidth utility.

    Linear and quadratic prices keep the utility concave, so plain
    golden-section search applies; tabulated prices get a grid scan first.
    """
    if not B > 0:
        raise DomainError(f"bandwidth must be positive, got {B}")

    def loss(a):
        u = sender_utility_fixed_B(np.clip(a, 0.0, B), B, price)
        if not np.all(np.isfinite(u)):
            raise NumericError("utility is not finite on [0, B]")
        return -np.asarray(u)

    # tighter than requested: the returned midpoint must land within tol
    line_tol = min(tol, 1e-3 * B) * 1e-2
    if price.kind == "tabulated":
        return grid_then_golden(loss, 0.0, B, grid=2001, tol=line_tol)
    return golden_section(loss, 0.0, B, tol=line_tol)


def verification_table(cases, kinds=("linear", "quadratic"), tol: float = 1e-6) -> list[dict]:
    """Calibrate, solve and check each (n, B) case; one row per (case, price kind)."""
    rows = []
    for n, B in cases:
        target = B / n
        for kind in kinds:
            price = calibrate_price(n, B, kind)
            br = best_response(B, price, tol)
            resid = foc_residual(target, B, price)
            deviations = [0.0, target / 2, 2 * target, B]
            dominant = all(
                sender_utility_fixed_B(target, B, price) >= sender_utility_fixed_B(min(d, B), B, price)
                for d in deviations
            )
            rows.append({
                "n": n,
                "B": B,
                "kind": kind,
                "coefficient": price.coefficient,
                "target": target,
                "best_response": br,
                "abs_error": abs(br - target),
                "foc_residual": resid,
                "pass": bool(abs(br - target) <= tol and resid < 1e-8 and dominant),
            })
    return rows

