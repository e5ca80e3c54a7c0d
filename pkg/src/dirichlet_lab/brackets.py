"""Regularised covariation estimators and weak quadratic variation diagnostics.

For eps = m * dt the clamped bracket at a grid time t_k is the left-point
Riemann sum

    [X, Y]_eps(t_k) = (dt / eps) * sum_{j < k} (X_{min(j+m, k)} - X_j) (Y_{min(j+m, k)} - Y_j)

and the unclamped variant reads X_{min(j+m, n)}, i.e. the path extended
constantly beyond the horizon.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import PathEnsemble, SamplePath, TimeGrid

DEFAULT_EPS_STEPS = (1, 2, 5, 10, 20, 50)
HEURISTIC_NOTE = (
    "tightness verdict is a numerical heuristic (quantile curve bounded by slack x its value "
    "at the largest eps); it is not a proof of weakly finite quadratic variation"
)


def _rows(X, grid: TimeGrid | None = None):
    """Return (2-D values, grid) from a SamplePath, PathEnsemble or array."""
    if isinstance(X, SamplePath):
        return X.values[None, :], X.grid
    if isinstance(X, PathEnsemble):
        return X.values, X.grid
    arr = np.asarray(X, dtype=float)
    if grid is None:
        raise ValueError("a grid is required for raw arrays")
    return (arr[None, :] if arr.ndim == 1 else arr), grid


def _grid_of(X):
    return X.grid if isinstance(X, (SamplePath, PathEnsemble)) else None


def _pair(X, Y, grid=None):
    gx, gy = _grid_of(X), _grid_of(Y)
    if gx is not None and gy is not None and gx != gy:
        raise ValueError("X and Y live on different grids")
    grid = gx or gy or grid
    x, grid = _rows(X, grid)
    y, _ = _rows(Y, grid)
    if x.shape[1] != y.shape[1]:
        raise ValueError("X and Y have different lengths")
    if y.shape[0] == 1 and x.shape[0] > 1:
        y = np.broadcast_to(y, x.shape)
    if x.shape[0] == 1 and y.shape[0] > 1:
        x = np.broadcast_to(x, y.shape)
    return x, y, grid


def _time_index(grid: TimeGrid, t):
    return grid.n_steps if t is None else grid.index(t)


def ucp_bracket_values(X, Y, eps: float, t: float | None = None, grid: TimeGrid | None = None) -> np.ndarray:
    """Clamped bracket at time t for every path (1-D array)."""
    x, y, grid = _pair(X, Y, grid)
    m = grid.eps_steps(eps)
    k = _time_index(grid, t)
    return kernels.ucp_terminal(x, y, m, k) * (grid.dt / eps)


def ucp_bracket(X, Y, eps: float, t: float | None = None) -> float:
    """[X, Y]^ucp_eps(t) for a single pair of paths (t defaults to the horizon)."""
    return float(ucp_bracket_values(X, Y, eps, t)[0])


def c_eps_values(X, Y, eps: float, t: float | None = None, grid: TimeGrid | None = None) -> np.ndarray:
    x, y, grid = _pair(X, Y, grid)
    m = grid.eps_steps(eps)
    k = _time_index(grid, t)
    return kernels.ceps_terminal(x, y, m, k) * (grid.dt / eps)


def c_eps_bracket(X, Y, eps: float, t: float | None = None) -> float:
    """C_eps(X, Y)(t): no clamp at t; the path is extended constantly past T."""
    return float(c_eps_values(X, Y, eps, t)[0])


def ucp_bracket_path(X, Y, eps: float, grid: TimeGrid | None = None) -> np.ndarray:
    """The clamped bracket at every grid time, shape (n_paths, n_steps + 1)."""
    x, y, grid = _pair(X, Y, grid)
    m = grid.eps_steps(eps)
    return kernels.ucp_path(x, y, m) * (grid.dt / eps)


def jump_square_sum(X: SamplePath | PathEnsemble, t: float | None = None):
    """Sum of squared registered jumps up to t (float for a path, array for an ensemble)."""
    grid = X.grid
    k = _time_index(grid, t)
    if isinstance(X, SamplePath):
        if X.jumps is None:
            raise ValueError("path has no jump registry")
        return float(sum(s * s for j, s in X.jumps if j <= k))
    sel = X.jump_index <= k
    return np.bincount(X.jump_path[sel], weights=X.jump_size[sel] ** 2, minlength=X.n_paths)


def continuous_bracket(X: SamplePath | PathEnsemble, eps: float, t: float | None = None):
    """Clamped bracket of X with itself minus the sum of squared jumps."""
    if isinstance(X, SamplePath):
        return ucp_bracket(X, X, eps, t) - jump_square_sum(X, t)
    return ucp_bracket_values(X, X, eps, t) - jump_square_sum(X, t)


# --------------------------------------------------------------------------
# curves and diagnostics


@dataclass
class BracketCurve:
    """Per-eps bracket values at a fixed time (rows = paths, columns = eps)."""

    epsilons: np.ndarray
    values: np.ndarray
    t: float

    def __post_init__(self):
        self.epsilons = np.asarray(self.epsilons, dtype=float)
        if np.any(np.diff(self.epsilons) <= 0):
            raise ValueError("eps values must be strictly increasing")


def bracket_curve(X, Y=None, eps_list=None, t: float | None = None) -> BracketCurve:
    grid = X.grid
    Y = X if Y is None else Y
    if eps_list is None:
        eps_list = [m * grid.dt for m in DEFAULT_EPS_STEPS if m <= grid.n_steps]
    eps_list = sorted(eps_list)
    vals = np.column_stack([ucp_bracket_values(X, Y, e, t) for e in eps_list])
    return BracketCurve(np.array(eps_list), vals, grid.T if t is None else t)


@dataclass
class WeakQVReport:
    epsilons: np.ndarray
    mean: np.ndarray
    quantile: np.ndarray
    per_path_sup_mean: np.ndarray
    sup_mean: float
    sup_quantile: float
    delta: float
    slack: float
    verdict: str
    note: str = HEURISTIC_NOTE
    extras: dict = field(default_factory=dict)

    @property
    def tight(self) -> bool:
        return self.verdict == "tight-consistent"

    def rows(self):
        for e, m, q, s in zip(self.epsilons, self.mean, self.quantile, self.per_path_sup_mean):
            yield {"epsilon": e, "mean": m, "q95": q, "per_path_sup_mean": s}

    def to_csv(self, target) -> None:
        with open(target, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epsilon", "mean", "q95", "per_path_sup_mean"])
            for r in self.rows():
                w.writerow([repr(float(r[c])) for c in ("epsilon", "mean", "q95", "per_path_sup_mean")])
            w.writerow([f"# verdict: {self.verdict}"])
            w.writerow([f"# note: {self.note}"])


def weak_qv_diagnostic(
    X, eps_list=None, delta: float = 0.05, slack: float = 2.0, t: float | None = None
) -> WeakQVReport:
    """Per-eps mean and (1 - delta)-quantile of [X, X]_eps(T) with a tightness verdict.

    The column ``q95`` holds the (1 - delta)-quantile (0.95 for the default
    delta).  ``per_path_sup_mean`` at eps is the ensemble mean of
    ``sup_{eps' <= eps} [X, X]_eps'(T)`` path by path.
    """
    curve = bracket_curve(X, None, eps_list, t)
    if curve.epsilons.size < 2:
        raise ValueError("weak_qv_diagnostic needs at least two eps values")
    vals = curve.values
    mean = vals.mean(axis=0)
    quant = np.quantile(vals, 1 - delta, axis=0)
    running_sup = np.maximum.accumulate(vals, axis=1)
    sup_mean = running_sup.mean(axis=0)
    tight = bool(np.max(quant) <= slack * quant[-1]) and np.all(np.isfinite(quant))
    return WeakQVReport(
        curve.epsilons, mean, quant, sup_mean,
        float(np.max(mean)), float(np.max(quant)), delta, slack,
        "tight-consistent" if tight else "not tight-consistent",
    )
