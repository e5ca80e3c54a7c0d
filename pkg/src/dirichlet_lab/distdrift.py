"""SDEs with distributional drift: the objects Sigma, h and L, and a simulator.

For continuous beta and non-vanishing sigma the formal operator
L psi = sigma^2 psi'' / 2 + beta' psi' is handled through

    Sigma(x) = lim_n 2 int_0^x beta'_n / sigma_n^2 dy,   h' = e^{-Sigma},  h(0) = 0,

with beta_n = beta * phi_n and sigma_n = sigma * phi_n for a mollifier
phi_n(x) = n phi(n x).  Functions f with f' = e^{-Sigma} phi (phi in C^1) get
L f = (sigma^2 / 2) phi' e^{-Sigma}.  Paths are simulated in the coordinate
Y = h(X), where the drift disappears.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import interpolate

from .core import PathEnsemble, TimeGrid, TruncationFn
from .expr import compile_coefficient
from .laws import JumpKernel
from .quadrature import _rule, composite_rule
from .simulate import JUMP_TIME_ROUNDING, ThinningError, _chunked, _draw, _rngs

SIGMA_ERROR = "Hypothesis H:Sigma-1 not numerically verified"
STABILIZATION_NOTE = (
    "the drift limit is a u.c.p. limit without a known rate; the stabilization tolerance is a numerical choice"
)
INVERSE_TOL = 1e-10
DEFAULT_SCHEDULE = (8, 16, 32, 64, 128)
DRIFT_SCHEDULE = (64, 128, 256, 512, 1024, 2048)


class SigmaConvergenceError(ArithmeticError):
    pass


class WorkingIntervalError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# mollifiers


class Mollifier:
    """A unit-mass mollifier phi with derivative, supported (numerically) in [-radius, radius]."""

    name = "mollifier"
    radius = 1.0

    def phi(self, u):
        raise NotImplementedError

    def dphi(self, u):
        raise NotImplementedError


class GaussianMollifier(Mollifier):
    name = "gaussian"
    radius = 10.0  # tail mass beyond 10 sd is below 1e-22

    def phi(self, u):
        return np.exp(-0.5 * u * u) / math.sqrt(2 * math.pi)

    def dphi(self, u):
        return -u * self.phi(u)


@lru_cache(maxsize=1)
def _bump_mass() -> float:
    nodes, w = composite_rule(np.linspace(-1.0, 1.0, 65), 1, 32)
    return float(np.exp(-1.0 / (1.0 - nodes * nodes)) @ w)


class BumpMollifier(Mollifier):
    """c exp(-1 / (1 - u^2)) on ]-1, 1[."""

    name = "bump"
    radius = 1.0

    def phi(self, u):
        u = np.asarray(u, dtype=float)
        inside = np.abs(u) < 1
        w = np.where(inside, 1.0 - u * u, 1.0)
        return np.where(inside, np.exp(-1.0 / w), 0.0) / _bump_mass()

    def dphi(self, u):
        u = np.asarray(u, dtype=float)
        inside = np.abs(u) < 1
        w = np.where(inside, 1.0 - u * u, 1.0)
        return np.where(inside, np.exp(-1.0 / w) * (-2.0 * u / (w * w)), 0.0) / _bump_mass()


MOLLIFIERS = {"gaussian": GaussianMollifier, "bump": BumpMollifier}


def _conv_rule(moll: Mollifier, n: float, panels: int = 32):
    """Nodes u and weights for int g(u) phi_n-type integrals over the support of phi_n."""
    x, w = _rule(16)
    r = moll.radius / n
    cuts = np.linspace(-r, r, panels + 1)
    half = 0.5 * np.diff(cuts)
    nodes = (0.5 * (cuts[:-1] + cuts[1:]))[:, None] + half[:, None] * x
    weights = half[:, None] * w
    return nodes.ravel(), weights.ravel()


def mollify(f: Callable, moll: Mollifier, n: float, x, derivative: bool = False):
    """(f * phi_n)(x), or (f * phi_n)'(x) = (f * phi_n')(x) when ``derivative``."""
    x = np.asarray(x, dtype=float)
    u, w = _conv_rule(moll, n)
    kern = n * n * moll.dphi(n * u) if derivative else n * moll.phi(n * u)
    vals = np.asarray(f(x[..., None] - u), dtype=float)
    return vals @ (w * kern)


# --------------------------------------------------------------------------
# drift specification and Sigma


@dataclass
class DriftSpec:
    """beta, sigma (expressions in x), the working interval [-R, R] and the jump data.

    ``jumps`` gives Q(y, dx) = intensity(y) F(dx).
    """

    beta: object = "0"
    sigma: object = "1"
    sigma_lower: float = 1e-3
    R: float = 4.0
    schedule: tuple = DEFAULT_SCHEDULE
    mollifier: str = "gaussian"
    table_step: float = 0.01
    tol: float = 1e-6
    jumps: JumpKernel = field(default_factory=JumpKernel.none)
    truncation: TruncationFn = field(default_factory=lambda: TruncationFn.ramp(1.0, 2.0))

    def __post_init__(self):
        self.b = compile_coefficient(self.beta)
        self.s = compile_coefficient(self.sigma)
        self.schedule = tuple(sorted(float(n) for n in self.schedule))
        if len(self.schedule) < 3:
            raise ValueError("the mollifier schedule needs at least 3 entries")
        if self.mollifier not in MOLLIFIERS:
            raise ValueError(f"unknown mollifier {self.mollifier!r}; choose from {sorted(MOLLIFIERS)}")
        steps = self.R / self.table_step
        if not self.R > 0 or abs(steps - round(steps)) > 1e-9:
            raise ValueError("R must be a positive multiple of table_step")
        probe = np.linspace(-self.R, self.R, 4001)
        sv = np.abs(self.s(0.0, probe))
        if np.min(sv) < self.sigma_lower:
            i = int(np.argmin(sv))
            raise ValueError(f"|sigma| = {sv[i]:.6g} at x={probe[i]:.6g} is below the declared lower bound {self.sigma_lower}")

    def beta_fn(self, x):
        return self.b(0.0, x)

    def sigma_fn(self, x):
        return self.s(0.0, x)


@dataclass(frozen=True)
class SigmaTable:
    """Sigma on the table grid with a C^2 cubic-spline interpolant."""

    x: np.ndarray
    values: np.ndarray
    iterates: tuple
    distances: tuple
    converged: bool
    mollifier: str

    @property
    def R(self) -> float:
        return float(self.x[-1])

    def spline(self):
        return _spline(self)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(np.abs(x) > self.R * (1 + 1e-12)):
            raise WorkingIntervalError(f"Sigma requested outside the working interval [-{self.R}, {self.R}]")
        return self.spline()(x)


@lru_cache(maxsize=64)
def _spline_cached(key):
    x, v = key
    return interpolate.CubicSpline(np.frombuffer(x), np.frombuffer(v))


def _spline(tab: SigmaTable):
    return _spline_cached((tab.x.tobytes(), tab.values.tobytes()))


def sigma_iterate(spec: DriftSpec, n: float, x: np.ndarray, moll: Mollifier | None = None) -> np.ndarray:
    """Sigma_n on the sorted grid x (containing 0): cumulative 8-point Gauss rule per cell."""
    moll = moll or MOLLIFIERS[spec.mollifier]()
    gx, gw = _rule(8)
    lo, hi = x[:-1], x[1:]
    half = 0.5 * (hi - lo)
    nodes = 0.5 * (lo + hi)[:, None] + half[:, None] * gx
    db = mollify(spec.beta_fn, moll, n, nodes, derivative=True)
    sn = mollify(spec.sigma_fn, moll, n, nodes)
    cells = 2.0 * (db / (sn * sn)) @ gw * half
    cum = np.concatenate([[0.0], np.cumsum(cells)])
    zero = int(np.argmin(np.abs(x)))
    return cum - cum[zero]


def build_sigma(spec: DriftSpec, interval: float | None = None, tol: float | None = None,
                mollifier: str | None = None) -> SigmaTable:
    """Iterate Sigma_n over the schedule and return the last iterate.

    Converged when the last sup-distance is below ``tol``.  Raises
    :class:`SigmaConvergenceError` when the distances stop decreasing while
    above ``tol``.
    """
    R = spec.R if interval is None else float(interval)
    tol = spec.tol if tol is None else float(tol)
    moll = MOLLIFIERS[mollifier or spec.mollifier]()
    m = int(round(R / spec.table_step))
    x = np.linspace(-R, R, 2 * m + 1)
    x[m] = 0.0
    iterates = [sigma_iterate(spec, n, x, moll) for n in spec.schedule]
    dist = [float(np.max(np.abs(b - a))) for a, b in zip(iterates[:-1], iterates[1:])]
    if not np.all(np.isfinite(iterates[-1])):
        raise SigmaConvergenceError(f"{SIGMA_ERROR}: non-finite Sigma iterate")
    converged = dist[-1] < tol
    if not converged and any(b >= a for a, b in zip(dist[:-1], dist[1:])):
        raise SigmaConvergenceError(
            f"{SIGMA_ERROR}: successive sup-distances {['%.3e' % d for d in dist]} do not decrease below tol={tol}"
        )
    last = iterates[-1]
    last.setflags(write=False)
    x.setflags(write=False)
    return SigmaTable(x, last, tuple(iterates), tuple(dist), converged, moll.name)


# --------------------------------------------------------------------------
# the harmonic transform h


@dataclass(frozen=True)
class HTransform:
    """h with h(0) = 0 and h' = e^{-Sigma}, tabulated with a cubic Hermite interpolant."""

    sigma: SigmaTable
    x: np.ndarray
    h_values: np.ndarray
    hprime_values: np.ndarray

    @property
    def R(self) -> float:
        return self.sigma.R

    def _interp(self):
        return interpolate.CubicHermiteSpline(self.x, self.h_values, self.hprime_values)

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(np.abs(x) > self.R * (1 + 1e-12)) or not np.all(np.isfinite(x)):
            raise WorkingIntervalError(f"h requested outside the working interval [-{self.R}, {self.R}]")
        return x

    def Sigma(self, x):
        return self.sigma(self._check(x))

    def h(self, x):
        return _hermite(self)(self._check(x))

    def hprime(self, x):
        return np.exp(-self.Sigma(x))

    def hsecond(self, x):
        """h'' = -Sigma' e^{-Sigma} (needs the spline derivative of Sigma)."""
        x = self._check(x)
        return -self.sigma.spline()(x, 1) * np.exp(-self.sigma(x))

    @property
    def y_range(self) -> tuple[float, float]:
        return float(self.h_values[0]), float(self.h_values[-1])

    def h_inv(self, y, tol: float = INVERSE_TOL):
        """Monotone bisection inside the bracketing table cell, to ``tol`` in x."""
        y = np.asarray(y, dtype=float)
        lo_y, hi_y = self.y_range
        if np.any(y < lo_y - 1e-14) or np.any(y > hi_y + 1e-14) or not np.all(np.isfinite(y)):
            raise WorkingIntervalError(f"h^-1 requested outside [{lo_y:.6g}, {hi_y:.6g}] (the image of the working interval)")
        cell = np.clip(np.searchsorted(self.h_values, y, side="right") - 1, 0, self.x.size - 2)
        lo, hi = self.x[cell].copy(), self.x[cell + 1].copy()
        H = _hermite(self)
        n_iter = int(math.ceil(math.log2(max(float(np.max(hi - lo)) if lo.size else 1.0, tol) / tol))) + 1
        for _ in range(n_iter):
            mid = 0.5 * (lo + hi)
            below = H(mid) < y
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)

    def table_rows(self):
        """Rows (x, Sigma, h, h_inv(x)); h_inv is NaN where x is outside the image of h."""
        lo_y, hi_y = self.y_range
        inside = (self.x >= lo_y) & (self.x <= hi_y)
        inv = np.full(self.x.shape, np.nan)
        inv[inside] = self.h_inv(self.x[inside])
        return zip(self.x, self.sigma.values, self.h_values, inv)

    def to_csv(self, target) -> None:
        with open(target, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "Sigma", "h", "h_inv"])
            for row in self.table_rows():
                w.writerow(["" if math.isnan(v) else repr(float(v)) for v in row])


@lru_cache(maxsize=64)
def _hermite_cached(key):
    x, h, d = (np.frombuffer(b) for b in key)
    return interpolate.CubicHermiteSpline(x, h, d)


def _hermite(ht: HTransform):
    return _hermite_cached((ht.x.tobytes(), ht.h_values.tobytes(), ht.hprime_values.tobytes()))


def build_h(sig: SigmaTable) -> HTransform:
    """h(x_i) by composite Simpson per table cell (midpoints from the Sigma spline)."""
    x = sig.x
    S = sig.spline()
    if np.max(np.abs(sig.values)) > 700:
        raise OverflowError("Sigma is too large on the table: e^{-Sigma} overflows")
    f = np.exp(-sig.values)
    fm = np.exp(-S(0.5 * (x[:-1] + x[1:])))
    cells = np.diff(x) / 6.0 * (f[:-1] + 4.0 * fm + f[1:])
    cum = np.concatenate([[0.0], np.cumsum(cells)])
    zero = int(np.flatnonzero(x == 0.0)[0])
    hv = cum - cum[zero]
    if not np.all(np.diff(hv) > 0):
        raise ArithmeticError("h is not strictly increasing on the table")
    f = f.copy()
    f[zero] = 1.0  # e^{-Sigma(0)} with Sigma(0) = 0
    for a in (hv, f):
        a.setflags(write=False)
    return HTransform(sig, x, hv, f)


# --------------------------------------------------------------------------
# the operator L on its domain


@dataclass(frozen=True)
class DomainFunction:
    """f with f' = e^{-Sigma} phi: given by phi, phi' and f(0)."""

    ht: HTransform
    phi: Callable
    dphi: Callable
    f0: float = 0.0

    def derivative(self, x):
        return np.exp(-self.ht.Sigma(x)) * self.phi(x)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        gx, gw = _rule(16)
        # int_0^x f' on 8 panels
        out = np.zeros(x.shape)
        for a in range(8):
            lo, hi = x * a / 8.0, x * (a + 1) / 8.0
            half = 0.5 * (hi - lo)
            nodes = (0.5 * (lo + hi))[..., None] + half[..., None] * gx
            out = out + (self.derivative(nodes) @ gw) * half
        return self.f0 + out

    def square(self) -> "DomainFunction":
        """f^2: (f^2)' = e^{-Sigma} (2 f phi), so phi_{f^2} = 2 f phi."""
        return DomainFunction(
            self.ht,
            lambda x: 2.0 * self(x) * self.phi(x),
            lambda x: 2.0 * self.derivative(x) * self.phi(x) + 2.0 * self(x) * self.dphi(x),
            self.f0 * self.f0,
        )


def h_as_domain_function(ht: HTransform) -> DomainFunction:
    return DomainFunction(ht, lambda x: np.ones_like(np.asarray(x, dtype=float)),
                          lambda x: np.zeros_like(np.asarray(x, dtype=float)))


def apply_L(ht: HTransform, sigma: Callable, f: DomainFunction) -> Callable:
    """x -> (sigma(x)^2 / 2) phi'(x) e^{-Sigma(x)}."""
    sig = compile_coefficient(sigma) if not callable(sigma) else sigma

    def Lf(x):
        x = np.asarray(x, dtype=float)
        s = _eval_sigma(sig, x)
        return 0.5 * s * s * np.asarray(f.dphi(x), dtype=float) * np.exp(-ht.Sigma(x))

    return Lf


def _eval_sigma(sig, x):
    try:
        return np.asarray(sig(0.0, x), dtype=float)
    except TypeError:
        return np.asarray(sig(x), dtype=float)


# --------------------------------------------------------------------------
# simulation


def _simulate(spec: DriftSpec, ht: HTransform, x0: float, grid: TimeGrid, seeds):
    rngs = _rngs(seeds)
    n, dt = grid.n_steps, grid.dt
    P = len(seeds)
    kern = spec.jumps
    normals, (cp, cs, ua, us) = _draw(rngs, n, dt, kern.rate_bound)
    sizes = kern.law.sample(us) if cs.size else us
    bounds = np.searchsorted(cs, np.arange(n + 1))
    t = grid.times
    sq = math.sqrt(dt)
    X = np.empty((P, n + 1))
    Xc = np.zeros((P, n + 1))
    W = np.zeros((P, n + 1))
    W[:, 1:] = np.cumsum(normals * sq, axis=1)
    comp = np.zeros((P, n + 1))
    sig = np.empty((P, n + 1))
    X[:, 0] = x0
    Y = ht.h(np.full(P, x0))
    lo_y, hi_y = ht.y_range
    jp, ji, js = [], [], []
    for j in range(n):
        x = X[:, j]
        s = spec.sigma_fn(x)
        sig[:, j] = s
        dW = normals[:, j] * sq
        Xc[:, j + 1] = Xc[:, j] + s * dW
        Y = Y + s * ht.hprime(x) * dW
        out = (Y <= lo_y) | (Y >= hi_y)
        if np.any(out):
            i = int(np.argmax(out))
            raise WorkingIntervalError(
                f"path {i} left the working interval [-{ht.R}, {ht.R}] at t={t[j + 1]:.6g}"
            )
        xnew = ht.h_inv(Y)
        if not kern.is_null:
            lam = kern.intensity(t[j], x)
            bad = (lam > kern.rate_bound * (1 + 1e-12)) | (lam < 0) | ~np.isfinite(lam)
            if np.any(bad):
                i = int(np.argmax(bad))
                raise ThinningError(f"intensity {lam[i]:.6g} at state x={x[i]:.6g} violates rate bound {kern.rate_bound}")
            comp[:, j + 1] = comp[:, j] + lam * dt
            a, b = bounds[j], bounds[j + 1]
            if b > a:
                paths = cp[a:b]
                acc = ua[a:b] * kern.rate_bound < lam[paths]
                if np.any(acc):
                    jump = np.zeros(P)
                    np.add.at(jump, paths[acc], sizes[a:b][acc])
                    hit = np.nonzero(jump)[0]
                    xnew = xnew.copy()
                    xnew[hit] += jump[hit]
                    if np.any(np.abs(xnew[hit]) >= ht.R):
                        i = int(hit[np.argmax(np.abs(xnew[hit]))])
                        raise WorkingIntervalError(
                            f"path {i} jumped out of the working interval [-{ht.R}, {ht.R}] at t={t[j + 1]:.6g}"
                        )
                    Y = Y.copy()
                    Y[hit] = ht.h(xnew[hit])
                    jp.append(hit)
                    ji.append(np.full(hit.size, j + 1))
                    js.append(jump[hit])
        X[:, j + 1] = xnew
    sig[:, n] = spec.sigma_fn(X[:, n])
    cat = lambda parts, dtype: np.concatenate(parts).astype(dtype) if parts else np.zeros(0, dtype=dtype)
    gt = {"Xc": Xc, "W": W, "sigma": sig, "compensator": comp}
    meta = {"scheme": "euler in h-coordinates + thinning", "jump_time_rounding": JUMP_TIME_ROUNDING}
    return PathEnsemble(grid, X, tuple(seeds), cat(jp, np.int64), cat(ji, np.int64), cat(js, float), gt, meta)


def simulate_distdrift(spec: DriftSpec, ht: HTransform, x0: float, grid: TimeGrid, n_paths: int, seed: int,
                       workers: int = 1) -> PathEnsemble:
    """Y = h(X) follows dY = (sigma h')(X) dW between jumps; jumps from Q(X_-, dx) ds by thinning.

    Ground truth: ``W``, ``Xc`` = int sigma(X) dW, ``sigma`` at grid points and
    ``compensator`` = int lambda(X) ds.
    """
    if abs(x0) >= ht.R:
        raise WorkingIntervalError(f"x0={x0} outside the working interval")
    return _chunked(lambda seeds: _simulate(spec, ht, float(x0), grid, seeds), n_paths, seed, workers)


# --------------------------------------------------------------------------
# the drift as a limit


@dataclass
class DriftLimit:
    values: np.ndarray  # (P, n+1) for the last n
    n_list: tuple
    distances: tuple
    stabilized: bool
    tol: float
    note: str = STABILIZATION_NOTE


def lf_cutoff(spec: DriftSpec, ht: HTransform, n: float, N: float, x, width: float = 1.0):
    """L f_n for f_n' = e^{-Sigma} chi_N (e^{Sigma} * phi_n): f_n -> Id in C^1, f_n' compactly supported.

    chi_N is 1 on [-N, N] and 0 outside [-N - width, N + width].
    """
    from .characteristics import smooth_step, smooth_step_derivative

    moll = MOLLIFIERS[spec.mollifier]()
    x = np.asarray(x, dtype=float)
    eS = lambda z: np.exp(ht.Sigma(z))
    E = mollify(eS, moll, n, x)
    dE = mollify(eS, moll, n, x, derivative=True)
    a = (np.abs(x) - N) / width - 1.0
    chi = smooth_step(a)
    dchi = np.sign(x) * smooth_step_derivative(a) / width
    s = spec.sigma_fn(x)
    return 0.5 * s * s * (dchi * E + chi * dE) * np.exp(-ht.Sigma(x))


def drift_limit_term(spec: DriftSpec, ht: HTransform, X, n_list=DRIFT_SCHEDULE, tol: float | None = None,
                     N: float | None = None) -> DriftLimit:
    """int_0^t L f_n(X_s) ds (left-point sums) along the schedule, with a stabilization check.

    N defaults to max |X|; the cut-off width shrinks (up to 1) to fit the working
    interval.  L f_n is tabulated on the table grid and interpolated by a cubic spline.
    """
    tol = spec.tol if tol is None else float(tol)
    vals = X.values
    if N is None:
        N = float(np.max(np.abs(vals)))
    moll = MOLLIFIERS[spec.mollifier]()
    width = min(1.0, ht.R - N - moll.radius / min(n_list))
    if width < 2 * spec.table_step:
        raise WorkingIntervalError(
            f"cut-off level N={N:.4g} leaves no room for the cut-off inside the working interval R={ht.R}"
        )
    reach = N + width
    xs = ht.x[np.abs(ht.x) <= reach]
    dt = X.grid.dt
    prev, dists, cur = None, [], None
    for n in n_list:
        tab = lf_cutoff(spec, ht, n, N, xs, width)
        Lf = interpolate.CubicSpline(xs, tab)(vals[:, :-1])
        cur = np.zeros(vals.shape)
        cur[:, 1:] = np.cumsum(Lf * dt, axis=1)
        if prev is not None:
            dists.append(float(np.max(np.abs(cur - prev))))
        prev = cur
    stabilized = bool(dists and dists[-1] < 5 * tol)
    return DriftLimit(cur, tuple(n_list), tuple(dists), stabilized, tol)


def tg_residual(spec: DriftSpec, X: PathEnsemble, x0: float) -> np.ndarray:
    """X - x0 - X^c - k*(mu - nu) - (x - k)*mu from ground truth; compare with :func:`drift_limit_term`."""
    gt = X.ground_truth
    if "Xc" not in gt or "compensator" not in gt:
        raise ValueError("tg_residual needs the ground-truth components Xc and compensator")
    out = X.values - x0 - gt["Xc"]
    if X.jump_size.size:
        small = np.zeros(X.values.shape)
        np.add.at(small, (X.jump_path, X.jump_index), X.jump_size)
        out = out - np.cumsum(small, axis=1)
    kern = spec.jumps
    if not kern.is_null:
        Ek = kern.law.expect(spec.truncation, breakpoints=spec.truncation.breakpoints)
        out = out + Ek * gt["compensator"]
    return out


# --------------------------------------------------------------------------
# JSON


def drift_spec_from_json(obj) -> DriftSpec:
    if isinstance(obj, str):
        obj = json.loads(obj)
    kw = {}
    for key in ("beta", "sigma", "sigma_lower", "R", "mollifier", "table_step", "tol"):
        if key in obj:
            kw[key] = obj[key]
    if "schedule" in obj:
        kw["schedule"] = tuple(obj["schedule"])
    if obj.get("jumps"):
        kw["jumps"] = JumpKernel.from_json(obj["jumps"])
    if obj.get("truncation"):
        kw["truncation"] = TruncationFn.from_json(obj["truncation"])
    return DriftSpec(**kw)


def distdrift_from_json(spec: dict, grid: TimeGrid, n_paths: int, seed: int, workers: int = 1) -> PathEnsemble:
    ds = drift_spec_from_json(spec)
    ht = build_h(build_sigma(ds))
    ens = simulate_distdrift(ds, ht, float(spec.get("x0", 0.0)), grid, n_paths, seed, workers)
    ens.metadata["sigma_converged"] = ht.sigma.converged
    return ens
