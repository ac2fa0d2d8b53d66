"""Synthetic counting experiment and estimation of the interference strength r.

A participant watches a feed where one "high" sender repeats a message
``alpha`` times and every other sender speaks once, then estimates how many
senders hold each opinion. Forgetting that the high sender already spoke
inflates the count on the high sender's side; the expected inflation is
``alpha * (1 - p_r)`` with ``p_r = alpha / (alpha + r * (alpha_bar - alpha))``.

Datasets are pandas frames with one row per (participant, feed). The
estimator works on per-cell sufficient statistics (count, sum, sum of
squares of Y for each distinct design cell), which keeps clustered
bootstraps cheap: resampling participants only reweights cells.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Callable, Mapping, Sequence

import numpy as np
import pandas as pd

from feedlearn.errors import DomainError, IdentifiabilityError
from feedlearn.optimize import coordinate_descent, grid_then_golden
from feedlearn.recall import RecallState, recall_probability, record_message, sample_recall

COVARIATES = ("same_color", "unknown_question")
DATASET_COLUMNS = [
    "participant", "feed", "n_total", "n_blue", "n1", "n0", "alpha", "alpha_bar",
    "Y1", "Y0", "Y", "same_color", "known_question",
]
RECOGNITION_COLUMNS = ["participant", "role", "alpha", "alpha_bar", "remembered"]
VARIANTS = ("all", "repeats")
R_MAX = 10.0
FEEDS_PER_PARTICIPANT = 3


def overcount_mean(alpha, alpha_bar, r, variant: str = "all"):
    """Expected number of extra senders counted on the high sender's side.

    ``variant="all"`` is alpha * (1 - p_r); ``"repeats"`` charges only the
    alpha - 1 repeats, (alpha - 1) * (1 - p_r), so a single message never
    inflates the count.
    """
    a = np.asarray(alpha, dtype=float)
    others = np.asarray(alpha_bar, dtype=float) - a
    r = np.asarray(r, dtype=float)
    if np.any(a < 1) or np.any(others < 0):
        raise DomainError("need 1 <= alpha <= alpha_bar")
    if np.any(r < 0):
        raise DomainError("interference strength must be non-negative")
    miss = (r * others) / (a + r * others)
    if variant == "all":
        out = a * miss
    elif variant == "repeats":
        out = (a - 1.0) * miss
    else:
        raise DomainError(f"unknown variant {variant!r}")
    return float(out) if np.ndim(out) == 0 else out


def _overcount_slope(alpha, alpha_bar, r, variant: str = "all"):
    """d overcount / d r."""
    a = np.asarray(alpha, dtype=float)
    k = np.asarray(alpha_bar, dtype=float) - a
    lead = a if variant == "all" else a - 1.0
    return lead * a * k / (a + r * k) ** 2


@dataclass(frozen=True)
class RModel:
    """r for a row = r0 + sum of effects of the row's active binary covariates."""

    r0: float
    effects: Mapping[str, float] = field(default_factory=dict)
    sigma_eps: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "effects", dict(self.effects))
        unknown = set(self.effects) - set(COVARIATES)
        if unknown:
            raise DomainError(f"unknown covariates {sorted(unknown)}; choose from {COVARIATES}")
        if self.sigma_eps < 0:
            raise DomainError(f"sigma_eps must be non-negative, got {self.sigma_eps}")
        if self.r0 + sum(min(v, 0.0) for v in self.effects.values()) < 0:
            raise DomainError("covariate effects would make r negative for some rows")

    def r_for(self, rows: pd.DataFrame) -> np.ndarray:
        r = np.full(len(rows), float(self.r0))
        for name, value in self.effects.items():
            r += value * rows[name].to_numpy(dtype=float)
        return r


@dataclass(frozen=True)
class ExperimentConfig:
    """Design of a synthetic study.

    ``mode="mean"`` adds the expected overcount to the true counts;
    ``mode="recollect"`` builds each feed, records every message into a
    recall state and draws, message by message, whether the high sender is
    recognised when the participant tallies the feed at the end.
    """

    num_participants: int = 1000
    r_model: RModel = field(default_factory=lambda: RModel(0.16))
    seed: int = 0
    share_blue: float = 0.5
    n_totals: tuple[int, ...] = (8, 10)
    alpha_max: int = 6
    mode: str = "mean"
    variant: str = "all"
    eta_sd: float = 0.0
    r_recall: float = 0.05
    false_alarm: float = 0.0

    def __post_init__(self) -> None:
        if self.num_participants < 1:
            raise DomainError("need at least one participant")
        if self.mode not in ("mean", "recollect"):
            raise DomainError(f"unknown mode {self.mode!r}")
        if self.variant not in VARIANTS:
            raise DomainError(f"unknown variant {self.variant!r}")
        if not 0 <= self.share_blue <= 1 or not 0 <= self.false_alarm <= 1:
            raise DomainError("shares and probabilities must lie in [0, 1]")
        if self.alpha_max < 1 or any(n < 2 for n in self.n_totals):
            raise DomainError("alpha_max must be >= 1 and every feed needs >= 2 senders")
        if self.eta_sd < 0 or self.r_recall < 0:
            raise DomainError("eta_sd and r_recall must be non-negative")


@dataclass(frozen=True)
class Dataset:
    rows: pd.DataFrame
    recognition: pd.DataFrame
    participants: pd.DataFrame


def _recollected_overcount(n_total: int, alpha: int, r: float, variant: str,
                           rng: np.random.Generator) -> int:
    """Tally one feed with explicit recall draws; the high sender has id 0."""
    order = rng.permutation(np.r_[np.zeros(alpha, dtype=int), np.arange(1, n_total)])
    state = RecallState()
    for source in order:
        state = record_message(state, int(source))
    judged = alpha if variant == "all" else alpha - 1
    # recognition at tally time sees the whole feed: own = alpha, other = alpha_bar - alpha
    return sum(not sample_recall(state, 0, r, rng) for _ in range(judged))


def generate_dataset(config: ExperimentConfig) -> Dataset:
    """Draw a full synthetic study; deterministic given ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    K, J = config.num_participants, FEEDS_PER_PARTICIPANT
    blue_viewer = rng.random(K) < config.share_blue

    n_total = rng.choice(np.asarray(config.n_totals), size=(K, J))
    n_blue = rng.integers(0, n_total + 1)
    # high sender uniform over all senders, so it is blue w.p. n_blue / n_total
    high_blue = rng.random((K, J)) * n_total < n_blue
    n1 = np.where(high_blue, n_blue, n_total - n_blue)
    n0 = n_total - n1
    alpha = rng.integers(1, config.alpha_max + 1, size=(K, J))
    show_picture = rng.random((K, J)) < 0.5
    alpha_bar = n_total - 1 + alpha
    same_color = high_blue == blue_viewer[:, None]
    feed = np.broadcast_to(np.arange(1, J + 1), (K, J))

    rows = pd.DataFrame({
        "participant": np.repeat(np.arange(K), J),
        "feed": feed.ravel(),
        "n_total": n_total.ravel(),
        "n_blue": n_blue.ravel(),
        "n1": n1.ravel(),
        "n0": n0.ravel(),
        "alpha": alpha.ravel(),
        "alpha_bar": alpha_bar.ravel(),
        "same_color": same_color.ravel().astype(int),
        "known_question": (feed.ravel() >= 2).astype(int),
        "show_picture": show_picture.ravel().astype(int),
    })
    rows["unknown_question"] = 1 - rows["known_question"]
    r_row = config.r_model.r_for(rows)

    if config.mode == "mean":
        overcount = overcount_mean(rows["alpha"], rows["alpha_bar"], r_row, config.variant)
    else:
        overcount = np.array([
            _recollected_overcount(int(n), int(a), float(r), config.variant, rng)
            for n, a, r in zip(rows["n_total"], rows["alpha"], r_row)
        ], dtype=float)

    sd = config.r_model.sigma_eps / math.sqrt(2.0)
    eps1 = rng.normal(0.0, sd, len(rows)) if sd > 0 else np.zeros(len(rows))
    eps0 = rng.normal(0.0, sd, len(rows)) if sd > 0 else np.zeros(len(rows))
    eta = rng.normal(0.0, config.eta_sd, len(rows)) if config.eta_sd > 0 else np.zeros(len(rows))
    rows["Y1"] = rows["n1"] + overcount + eta + eps1
    rows["Y0"] = rows["n0"] + eta + eps0
    rows["Y"] = (rows["Y1"] - rows["Y0"]) - (rows["n1"] - rows["n0"])

    recognition = _recognition_answers(rows[rows["feed"] == J], config, rng)
    participants = pd.DataFrame({"participant": np.arange(K), "sees_blue": blue_viewer.astype(int)})
    return Dataset(rows, recognition, participants)


def _recognition_answers(last: pd.DataFrame, config: ExperimentConfig,
                         rng: np.random.Generator) -> pd.DataFrame:
    """End-of-study name check: the high sender, one low sender per side, two absent names."""
    a = last["alpha"].to_numpy()
    abar = last["alpha_bar"].to_numpy()
    n1 = last["n1"].to_numpy()
    n0 = last["n0"].to_numpy()
    parts = last["participant"].to_numpy()
    frames = []
    roles = [
        ("high", a, np.ones(len(a), bool)),
        ("low_same", np.ones_like(a), n1 >= 2),
        ("low_other", np.ones_like(a), n0 >= 1),
    ]
    for role, own, exists in roles:
        p = recall_probability(own[exists], abar[exists] - own[exists], config.r_recall)
        frames.append(pd.DataFrame({
            "participant": parts[exists], "role": role, "alpha": own[exists],
            "alpha_bar": abar[exists], "remembered": (rng.random(exists.sum()) < p).astype(int),
        }))
    for role in ("absent_a", "absent_b"):
        frames.append(pd.DataFrame({
            "participant": parts, "role": role, "alpha": 0, "alpha_bar": abar,
            "remembered": (rng.random(len(parts)) < config.false_alarm).astype(int),
        }))
    return (pd.concat(frames, ignore_index=True)
            .sort_values(["participant", "role"], kind="stable", ignore_index=True))


def filter_dataset(rows: pd.DataFrame, max_abs_error: float = 5) -> pd.DataFrame:
    """Drop known-question answers that miss either true count by more than ``max_abs_error``."""
    if "known_question" not in rows:
        raise DomainError("rows must carry the known_question flag")
    off = ((rows["Y1"] - rows["n1"]).abs() > max_abs_error) | ((rows["Y0"] - rows["n0"]).abs() > max_abs_error)
    drop = off & (rows["known_question"] == 1)
    return rows.loc[~drop].reset_index(drop=True)


# ---------------------------------------------------------------------------
# Estimation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Cells:
    """Sufficient statistics of Y per (cluster, design cell)."""

    alpha: np.ndarray
    alpha_bar: np.ndarray
    design: np.ndarray        # (cells, 1 + covariates): intercept then covariates
    count: np.ndarray         # (clusters, cells)
    total: np.ndarray
    total_sq: np.ndarray
    clusters: np.ndarray      # sorted cluster labels


def _cells(rows: pd.DataFrame, covariates: Sequence[str], cluster: str = "participant") -> _Cells:
    keys = ["alpha", "alpha_bar", *covariates]
    cell_keys, cell_idx = np.unique(rows[keys].to_numpy(dtype=float), axis=0, return_inverse=True)
    clusters, cluster_idx = np.unique(rows[cluster].to_numpy(), return_inverse=True)
    shape = (len(clusters), len(cell_keys))
    flat = cluster_idx.ravel() * shape[1] + cell_idx.ravel()
    y = rows["Y"].to_numpy(dtype=float)
    size = shape[0] * shape[1]
    return _Cells(
        alpha=cell_keys[:, 0],
        alpha_bar=cell_keys[:, 1],
        design=np.column_stack([np.ones(len(cell_keys)), cell_keys[:, 2:]]),
        count=np.bincount(flat, minlength=size).reshape(shape).astype(float),
        total=np.bincount(flat, weights=y, minlength=size).reshape(shape),
        total_sq=np.bincount(flat, weights=y * y, minlength=size).reshape(shape),
        clusters=clusters,
    )


def _check_identifiable(rows: pd.DataFrame, covariates: Sequence[str]) -> None:
    if len(rows) == 0:
        raise IdentifiabilityError("no rows to fit")
    if rows["alpha"].nunique() < 2:
        raise IdentifiabilityError("need at least two distinct repetition counts to identify r")
    for name in covariates:
        if name not in COVARIATES:
            raise DomainError(f"unknown covariate {name!r}; choose from {COVARIATES}")
        if rows[name].nunique() < 2:
            raise IdentifiabilityError(f"covariate {name!r} does not vary in the data")


@dataclass(frozen=True)
class RFit:
    coefficients: dict[str, float]
    sigma_eps: float
    loglik: float
    n_rows: int
    sweeps: int
    converged: bool


def _fit_cells(cells: _Cells, weights: np.ndarray, variant: str, x0=None):
    """Batch MLE: one fit per row of ``weights`` (multiplicity of each cluster)."""
    n = weights @ cells.count
    s1 = weights @ cells.total
    s2 = weights @ cells.total_sq
    mean = np.divide(s1, n, out=np.zeros_like(s1), where=n > 0)
    within = np.maximum(s2 - np.divide(s1 * s1, n, out=np.zeros_like(s1), where=n > 0), 0.0).sum(axis=1)
    p = cells.design.shape[1]
    batch = len(weights)

    def objective(theta):
        r = np.maximum(theta @ cells.design.T, 0.0)
        f = overcount_mean(cells.alpha, cells.alpha_bar, r, variant)
        return np.sum(n * (mean - f) ** 2, axis=1)

    lower = np.r_[0.0, np.full(p - 1, -R_MAX)]
    upper = np.full(p, R_MAX)
    start = np.tile(lower.clip(0.0), (batch, 1)) if x0 is None else np.tile(x0, (batch, 1))
    theta, sweeps, converged = coordinate_descent(objective, start, lower, upper)
    n_rows = n.sum(axis=1)
    sse = within + objective(theta)
    sigma2 = sse / n_rows
    loglik = -0.5 * n_rows * (np.log(2.0 * math.pi * sigma2) + 1.0)
    return theta, np.sqrt(sigma2), loglik, n_rows, sweeps, converged


def fit_r(rows: pd.DataFrame, covariates: Sequence[str] = (), variant: str = "all") -> RFit:
    """Gaussian maximum likelihood for r (and covariate shifts of r) from the overcount Y.

    Coordinate descent with golden-section line searches inside the box
    r0 in [0, R_MAX], effects in [-R_MAX, R_MAX]; the implied per-row r is
    floored at zero. sigma_eps is profiled out.
    """
    covariates = list(covariates)
    _check_identifiable(rows, covariates)
    cells = _cells(rows, covariates)
    theta, sigma, loglik, n_rows, sweeps, converged = _fit_cells(
        cells, np.ones((1, len(cells.clusters))), variant
    )
    names = ["r0", *covariates]
    return RFit(
        coefficients=dict(zip(names, theta[0].tolist())),
        sigma_eps=float(sigma[0]),
        loglik=float(loglik[0]),
        n_rows=int(n_rows[0]),
        sweeps=sweeps,
        converged=converged,
    )


# ---------------------------------------------------------------------------
# Clustered bootstrap
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BootstrapResult:
    estimate: float
    lo: float
    hi: float
    replicates: np.ndarray
    level: float
    seed: int

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def covers(self, value: float) -> bool:
        return self.lo <= value <= self.hi


def cluster_resamples(n_clusters: int, reps: int, seed: int) -> np.ndarray:
    """(reps, n_clusters) indices of clusters drawn with replacement."""
    if n_clusters < 2:
        raise DomainError(f"bootstrap needs at least two clusters, got {n_clusters}")
    if reps < 1:
        raise DomainError("reps must be positive")
    return np.random.default_rng(seed).integers(0, n_clusters, size=(reps, n_clusters))


def _multiplicities(draws: np.ndarray) -> np.ndarray:
    reps, k = draws.shape
    flat = (np.arange(reps)[:, None] * k + draws).ravel()
    return np.bincount(flat, minlength=reps * k).reshape(reps, k).astype(float)


def _percentile(values: np.ndarray, level: float) -> tuple[float, float]:
    if not 0 < level < 1:
        raise DomainError(f"level must lie in (0, 1), got {level}")
    lo, hi = np.quantile(values, [(1 - level) / 2, (1 + level) / 2])
    return float(lo), float(hi)


def bootstrap_ci(
    data,
    statistic: Callable,
    cluster="participant",
    reps: int = 2000,
    level: float = 0.95,
    seed: int = 0,
) -> BootstrapResult:
    """Percentile interval from resampling whole clusters with replacement.

    ``data`` is a DataFrame (``cluster`` names a column) or an array
    (``cluster`` is an array of labels, one per row). ``statistic`` maps a
    resampled ``data`` to a float.
    """
    labels = data[cluster].to_numpy() if isinstance(cluster, str) else np.asarray(cluster)
    if len(labels) != len(data):
        raise DomainError("one cluster label per row is required")
    clusters, inverse = np.unique(labels, return_inverse=True)
    order = np.argsort(inverse.ravel(), kind="stable")
    bounds = np.r_[0, np.cumsum(np.bincount(inverse.ravel(), minlength=len(clusters)))]
    members = [order[bounds[k]:bounds[k + 1]] for k in range(len(clusters))]
    draws = cluster_resamples(len(clusters), reps, seed)
    take = data.iloc.__getitem__ if isinstance(data, pd.DataFrame) else data.__getitem__

    values = np.empty(reps)
    for b, row in enumerate(draws):
        values[b] = statistic(take(np.concatenate([members[k] for k in row])))
    lo, hi = _percentile(values, level)
    return BootstrapResult(float(statistic(data)), lo, hi, values, level, seed)


def bootstrap_fit_r(
    rows: pd.DataFrame,
    covariates: Sequence[str] = (),
    reps: int = 2000,
    level: float = 0.95,
    seed: int = 0,
    variant: str = "all",
    fit: RFit | None = None,
) -> dict[str, BootstrapResult]:
    """Clustered-bootstrap intervals for every coefficient of ``fit_r``.

    Uses the same participant draws as ``bootstrap_ci`` with the same seed,
    but refits all replicates at once on reweighted cell statistics.
    """
    covariates = list(covariates)
    fit = fit if fit is not None else fit_r(rows, covariates, variant)
    cells = _cells(rows, covariates)
    weights = _multiplicities(cluster_resamples(len(cells.clusters), reps, seed))
    x0 = np.array(list(fit.coefficients.values()))
    theta = _fit_cells(cells, weights, variant, x0=x0)[0]
    out = {}
    for j, name in enumerate(fit.coefficients):
        lo, hi = _percentile(theta[:, j], level)
        out[name] = BootstrapResult(fit.coefficients[name], lo, hi, theta[:, j], level, seed)
    return out


# ---------------------------------------------------------------------------
# Recall curve and overcount curve
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RecallFit:
    r: float
    loglik: float
    n: int
    at_boundary: bool


def fit_recall_curve(answers: pd.DataFrame) -> RecallFit:
    """Bernoulli MLE of r from (alpha, alpha_bar, remembered) answers about named senders."""
    if len(answers) == 0:
        raise IdentifiabilityError("no recognition answers")
    if (answers["alpha"] < 1).any():
        raise DomainError("recall curve needs senders with at least one message")
    grouped = answers.groupby(["alpha", "alpha_bar"])["remembered"].agg(["sum", "count"]).reset_index()
    a = grouped["alpha"].to_numpy(float)
    others = grouped["alpha_bar"].to_numpy(float) - a
    hits = grouped["sum"].to_numpy(float)
    trials = grouped["count"].to_numpy(float)

    def negloglik(r):
        r = np.atleast_1d(r)
        p = recall_probability(a[None, :], others[None, :], r[:, None])
        p = np.clip(p, 1e-15, 1 - 1e-15)
        return -np.sum(hits * np.log(p) + (trials - hits) * np.log1p(-p), axis=1)

    outcomes = answers["remembered"].unique()
    if len(outcomes) == 1:
        warnings.warn("all recognition outcomes are identical; r is at a boundary", RuntimeWarning)
        r_hat = 0.0 if outcomes[0] == 1 else R_MAX
    else:
        r_hat = float(grid_then_golden(negloglik, np.array([0.0]), np.array([R_MAX]), grid=201)[0])
    return RecallFit(r_hat, float(-negloglik(r_hat)[0]), len(answers), r_hat in (0.0, R_MAX))


def overcount_curve(
    rows: pd.DataFrame,
    r: float | None = None,
    reps: int = 2000,
    level: float = 0.95,
    seed: int = 0,
    variant: str = "all",
) -> pd.DataFrame:
    """Mean Y by repetition count with clustered CIs and the model curve at ``r``.

    With ``r=None`` the covariate-free fit on ``rows`` supplies the curve.
    """
    if len(rows) == 0:
        raise DomainError("rows must be non-empty")
    if r is None:
        r = fit_r(rows, variant=variant).coefficients["r0"]
    out = []
    for alpha, group in rows.groupby("alpha", sort=True):
        y = group["Y"].to_numpy(float)
        labels = group["participant"].to_numpy()
        if len(np.unique(labels)) >= 2:
            ci = bootstrap_ci(y, np.mean, cluster=labels, reps=reps, level=level, seed=seed + int(alpha))
            lo, hi = ci.lo, ci.hi
        else:
            lo = hi = float("nan")
        model = overcount_mean(group["alpha"], group["alpha_bar"], r, variant)
        out.append({
            "alpha": int(alpha), "count": len(group), "mean_Y": float(y.mean()),
            "ci_lo": lo, "ci_hi": hi, "model": float(np.mean(model)),
        })
    return pd.DataFrame(out)


# ---------------------------------------------------------------------------
# Design helpers
# ---------------------------------------------------------------------------


def calibrate_sigma_eps(
    target_width: float,
    r: float,
    num_participants: int,
    feeds: int = 2,
    n_totals: Sequence[int] = (8, 10),
    alpha_max: int = 6,
    level: float = 0.95,
    variant: str = "all",
) -> float:
    """Noise scale giving a Wald interval of ``target_width`` for r under the default design.

    Uses the expected Fisher information per row, averaging the squared slope
    of the overcount in r over the uniform design draws.
    """
    if not target_width > 0:
        raise DomainError("target width must be positive")
    alphas = np.arange(1, alpha_max + 1)
    slopes = [_overcount_slope(alphas, n - 1 + alphas, r, variant) for n in n_totals]
    info_per_row = float(np.mean(np.square(slopes)))
    z = NormalDist().inv_cdf((1 + level) / 2)
    se = target_width / (2 * z)
    return se * math.sqrt(num_participants * feeds * info_per_row)


def estimate(
    rows: pd.DataFrame,
    covariates: Sequence[str] = (),
    *,
    include_first_feed: bool = False,
    max_abs_error: float = 5,
    reps: int = 2000,
    level: float = 0.95,
    seed: int = 0,
    variant: str = "all",
) -> dict:
    """Filter, fit and bootstrap; returns a JSON-ready summary."""
    kept = filter_dataset(rows, max_abs_error)
    used = kept if include_first_feed else kept[kept["known_question"] == 1]
    fit = fit_r(used, covariates, variant)
    cis = bootstrap_fit_r(used, covariates, reps, level, seed, variant, fit=fit)
    return {
        "coefficients": fit.coefficients,
        "sigma_eps": fit.sigma_eps,
        "loglik": fit.loglik,
        "ci": {name: [c.lo, c.hi] for name, c in cis.items()},
        "level": level,
        "reps": reps,
        "seed": seed,
        "rows_total": len(rows),
        "rows_dropped": len(rows) - len(kept),
        "rows_used": fit.n_rows,
        "converged": fit.converged,
    }
