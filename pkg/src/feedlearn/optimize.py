"""One-dimensional minimisation by golden-section search.

Every routine works on a batch: ``lo`` and ``hi`` may be arrays and ``f``
maps an array of abscissae to an array of values of the same shape, one
independent problem per element. Scalars in give a float back.
"""
from __future__ import annotations

import math

import numpy as np

from feedlearn.errors import NumericError

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
INV_PHI2 = (3.0 - math.sqrt(5.0)) / 2.0


def _evaluate(f, x):
    y = np.asarray(f(x), dtype=float)
    if not np.all(np.isfinite(y)):
        raise NumericError("objective returned a non-finite value")
    return y


def golden_section(f, lo, hi, tol: float = 1e-10):
    """Minimise a unimodal ``f`` on [lo, hi]; returns the midpoint of the final bracket.

    The bracket shrinks to width <= tol, so the error is at most tol / 2.
    """
    scalar = np.ndim(lo) == 0 and np.ndim(hi) == 0
    a, b = np.broadcast_arrays(np.array(lo, dtype=float), np.array(hi, dtype=float))
    a, b = np.minimum(a, b).copy(), np.maximum(a, b).copy()
    width = float(np.max(b - a, initial=0.0))
    steps = 0 if width <= tol else int(math.ceil(math.log(tol / width) / math.log(INV_PHI)))

    c = a + INV_PHI2 * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = _evaluate(f, c), _evaluate(f, d)
    for _ in range(steps):
        left = fc < fd
        # keep [a, d] where f(c) < f(d), otherwise [c, b]
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        new_c = a + INV_PHI2 * (b - a)
        new_d = a + INV_PHI * (b - a)
        probe = np.where(left, new_c, new_d)
        fp = _evaluate(f, probe)
        c, d = np.where(left, new_c, d), np.where(left, c, new_d)
        fc, fd = np.where(left, fp, fd), np.where(left, fc, fp)
    x = 0.5 * (a + b)
    return float(x) if scalar else x


def grid_then_golden(f, lo, hi, grid: int = 41, tol: float = 1e-10):
    """Coarse grid scan followed by golden-section refinement around the best grid point.

    Guards against the bracket missing the minimum when ``f`` is only
    unimodal near its optimum.
    """
    scalar = np.ndim(lo) == 0 and np.ndim(hi) == 0
    a, b = np.broadcast_arrays(np.atleast_1d(np.array(lo, dtype=float)),
                               np.atleast_1d(np.array(hi, dtype=float)))
    frac = np.linspace(0.0, 1.0, grid)
    pts = a[..., None] + (b - a)[..., None] * frac
    vals = np.stack([_evaluate(f, pts[..., k]) for k in range(grid)], axis=-1)
    best = np.argmin(vals, axis=-1)
    left = np.take_along_axis(pts, np.maximum(best - 1, 0)[..., None], -1)[..., 0]
    right = np.take_along_axis(pts, np.minimum(best + 1, grid - 1)[..., None], -1)[..., 0]
    x = golden_section(f, left, right, tol)
    x = np.atleast_1d(x)
    # the refined point can only be worse than the grid if f is flat to rounding
    fx = _evaluate(f, x)
    fbest = np.take_along_axis(vals, best[..., None], -1)[..., 0]
    gbest = np.take_along_axis(pts, best[..., None], -1)[..., 0]
    x = np.where(fx <= fbest, x, gbest)
    return float(x[0]) if scalar else x


def coordinate_descent(
    f,
    x0: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    *,
    step_tol: float = 1e-7,
    line_tol: float = 1e-10,
    grid: int = 41,
    max_sweeps: int = 500,
):
    """Box-constrained minimisation by cyclic exact line searches.

    ``x0`` has shape (batch, p); ``f`` maps a (batch, p) array to (batch,)
    values. Stops once no coordinate moves by more than ``step_tol`` in a
    full sweep. Returns ``(x, sweeps, converged)``.
    """
    x = np.array(x0, dtype=float, copy=True)
    if x.ndim == 1:
        x = x[None, :]
    lower = np.broadcast_to(np.asarray(lower, dtype=float), x.shape)
    upper = np.broadcast_to(np.asarray(upper, dtype=float), x.shape)
    p = x.shape[1]
    for sweep in range(1, max_sweeps + 1):
        moved = 0.0
        for k in range(p):
            def along(v, k=k):
                trial = x.copy()
                trial[:, k] = v
                return f(trial)

            if sweep == 1:
                new = grid_then_golden(along, lower[:, k], upper[:, k], grid, line_tol)
            else:
                # later sweeps move little; search a shrinking window around the iterate
                radius = np.maximum(4.0 * last_step[:, k], 1e-6)
                lo = np.maximum(lower[:, k], x[:, k] - radius)
                hi = np.minimum(upper[:, k], x[:, k] + radius)
                new = grid_then_golden(along, lo, hi, 9, line_tol)
                hit = (np.isclose(new, lo) & (lo > lower[:, k])) | (np.isclose(new, hi) & (hi < upper[:, k]))
                if np.any(hit):
                    wide = grid_then_golden(along, lower[:, k], upper[:, k], grid, line_tol)
                    new = np.where(hit, wide, new)
            step = np.abs(new - x[:, k])
            if sweep == 1:
                last_step = np.zeros_like(x)
            last_step[:, k] = step
            moved = max(moved, float(step.max(initial=0.0)))
            x[:, k] = new
        if moved < step_tol:
            return x, sweep, True
    return x, max_sweeps, False
