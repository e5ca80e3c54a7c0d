"""Characteristics (B^k, C, nu) along a path and their transformation rules.

All Stieltjes integrals are left-point sums on the grid: the integrand for
the step (t_j, t_{j+1}] is evaluated at X(t_j).  Kernel integrals
``int g(X_{s-}, x) nu(ds, dx)`` are computed step by step as
``intensity(t_j, X_j) * dt * E[g(X_j, J)]`` with adaptive Gauss-Legendre
quadrature for continuous size laws, or as sums over a deterministic atom
list.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import optimize

from .core import JumpMeasure, SamplePath, TimeGrid, TruncationFn
from .expr import Expression, compile_coefficient
from .laws import JumpKernel, law_from_json
from .quadrature import QuadratureError, gauss_legendre

QUAD_RTOL = 1e-9


@dataclass(frozen=True)
class AtomKernel:
    """Deterministic compensator atoms: (grid time, size, mass)."""

    atoms: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        atoms = tuple(sorted((float(t), float(x), float(w)) for t, x, w in self.atoms))
        if any(w < 0 for _, _, w in atoms):
            raise ValueError("atom masses must be nonnegative")
        object.__setattr__(self, "atoms", atoms)


@dataclass(frozen=True)
class CharTriplet:
    """Characteristics of a process along one path.

    B: finite-variation part for truncation k (B(0) = 0).
    C: bracket of the continuous martingale part (C(0) = 0, nondecreasing).
    nu: jump compensator, a :class:`JumpKernel` or :class:`AtomKernel`.
    """

    B: SamplePath
    C: SamplePath
    nu: JumpKernel | AtomKernel
    k: TruncationFn

    def __post_init__(self):
        if self.B.grid != self.C.grid:
            raise ValueError("B and C must share the grid")
        if abs(self.B.values[0]) > 0 or abs(self.C.values[0]) > 0:
            raise ValueError("B and C must start at 0")
        if np.any(np.diff(self.C.values) < -1e-14):
            raise ValueError("C must be nondecreasing")

    @property
    def grid(self) -> TimeGrid:
        return self.B.grid


def _path(grid, values) -> SamplePath:
    return SamplePath(grid, values, ())


def _cumulative(increments: np.ndarray) -> np.ndarray:
    out = np.zeros(increments.size + 1)
    out[1:] = np.cumsum(increments)
    return out


# --------------------------------------------------------------------------
# kernel integration


def kernel_increments(
    nu,
    X: SamplePath | None,
    g: Callable,
    grid: TimeGrid,
    *,
    breakpoints=(),
    state_breakpoints: Callable | None = None,
    rtol: float = QUAD_RTOL,
) -> np.ndarray:
    """Per-step integrals of g(x_state, size) against nu along the path.

    ``g(x, z)`` must broadcast: x has shape (S, 1), z shape (K,).
    Returns an array of length n_steps whose entry j covers (t_j, t_{j+1}]
    (for atom kernels: atoms whose time lies in that interval).
    """
    n, dt = grid.n_steps, grid.dt
    t = grid.times
    xs = X.values if X is not None else np.zeros(n + 1)
    if isinstance(nu, AtomKernel):
        out = np.zeros(n)
        left = X.left_limits() if X is not None else xs
        for s, z, w in nu.atoms:
            j = grid.ceil_index(s)
            if j == 0:
                continue
            out[j - 1] += w * float(np.asarray(g(np.array([[left[j]]]), np.array([z])))[0, 0])
        return out
    if nu.is_null:
        return np.zeros(n)
    lam = np.asarray(nu.intensity(t[:-1], xs[:-1]), dtype=float)
    active = lam != 0.0
    out = np.zeros(n)
    if not np.any(active):
        return out
    x_act = xs[:-1][active]
    try:
        if state_breakpoints is None or nu.law.discrete:
            ex = nu.law.expect(lambda z: g(x_act[:, None], z[None, :]), breakpoints=breakpoints, rtol=rtol)
        else:
            per_state = [tuple(breakpoints) + tuple(state_breakpoints(float(x))) for x in x_act]
            width = max(len(b) for b in per_state)
            rows = np.full((x_act.size, max(width, 1)), np.nan)
            for i, b in enumerate(per_state):
                rows[i, : len(b)] = b
            ex = nu.law.expect_rows(lambda z, r: g(x_act[r][:, None], z), rows, rtol=rtol)
    except QuadratureError as exc:
        raise QuadratureError(f"kernel integral diverged: {exc}") from None
    out[active] = lam[active] * dt * np.asarray(ex).reshape(-1)
    return out


# --------------------------------------------------------------------------
# operations


def change_truncation(triplet: CharTriplet, k_new: TruncationFn, X: SamplePath | None = None) -> CharTriplet:
    """B^{k_new} = B^k + (k_new - k) * nu; C and nu unchanged."""
    k_old = triplet.k
    if k_new is k_old:
        return triplet
    bps = tuple(k_old.breakpoints) + tuple(k_new.breakpoints)
    inc = kernel_increments(
        triplet.nu, X, lambda x, z: np.broadcast_to(k_new(z) - k_old(z), np.broadcast(x, z).shape),
        triplet.grid, breakpoints=bps,
    )
    B = _path(triplet.grid, triplet.B.values + _cumulative(inc))
    return replace(triplet, B=B, k=k_new)


def pushforward(jumps: JumpMeasure | SamplePath, v: Callable, X: SamplePath) -> JumpMeasure:
    """Atoms (t, x) -> (t, v(t, X_{t-} + x) - v(t, X_{t-})), zero sizes dropped.

    ``jumps`` is a JumpMeasure (times on X's grid) or a path whose registry is used.
    """
    if isinstance(jumps, SamplePath):
        measure = JumpMeasure(tuple((j * jumps.grid.dt, s) for j, s in jumps.jumps or ()))
    else:
        measure = jumps
    left = X.left_limits()
    out = []
    for s, x in measure.atoms:
        j = X.grid.index(s)
        y = float(v(s, left[j] + x) - v(s, left[j]))
        if y != 0.0:
            out.append((s, y))
    return JumpMeasure(tuple(out))


def pushforward_integral(triplet: CharTriplet, v: Callable, g: Callable, X: SamplePath) -> np.ndarray:
    """Cumulative int g(y) nu_bar(ds, dy), nu_bar the image of nu under
    x -> v(X_- + x) - v(X_-) for a time-homogeneous map v; points sent to 0 are dropped."""

    def integrand(x, z):
        y = v(x + z) - v(x)
        nz = y != 0.0
        return np.where(nz, g(np.where(nz, y, 1.0)), 0.0)

    return _cumulative(kernel_increments(triplet.nu, X, integrand, triplet.grid))


def ito_compensator(
    triplet: CharTriplet, f: Callable, df: Callable, d2f: Callable, X: SamplePath,
    *, state_breakpoints: Callable | None = None,
) -> SamplePath:
    """Predictable part of f(X):

    1/2 int f''(X) dC + int f'(X) dB^k + int int (f(X_- + x) - f(X_-) - k(x) f'(X_-)) nu(ds, dx).
    """
    grid = triplet.grid
    xs = X.values[:-1]
    dC = np.diff(triplet.C.values)
    dB = np.diff(triplet.B.values)
    k = triplet.k
    cont = 0.5 * d2f(xs) * dC + df(xs) * dB
    jump = kernel_increments(
        triplet.nu, X, lambda x, z: f(x + z) - f(x) - k(z) * df(x), grid,
        breakpoints=k.breakpoints, state_breakpoints=state_breakpoints,
    )
    return _path(grid, _cumulative(cont + jump))


def _check_bijective(dh: Callable, X: SamplePath, jump_reach: float = 0.0) -> None:
    lo, hi = float(np.min(X.values)) - jump_reach, float(np.max(X.values)) + jump_reach
    probe = np.concatenate([np.linspace(lo, hi, 4001), X.values, X.left_limits()])
    d = np.asarray(dh(probe), dtype=float)
    if np.any(np.abs(d) < 1e-12) or (np.any(d > 0) and np.any(d < 0)):
        raise ValueError("h' vanishes or changes sign on the path range: h is not numerically bijective")


def _h_breakpoints(h: Callable, k: TruncationFn):
    """Jump sizes x at which h(X + x) - h(X) crosses a breakpoint of k (h monotone)."""
    cache: dict[float, list] = {}

    def bps(x0: float):
        if x0 in cache:
            return cache[x0]
        cache[x0] = out = _solve_breakpoints(x0)
        return out

    def _solve_breakpoints(x0: float):
        out = []
        h0 = float(h(x0))
        for b in k.breakpoints:
            target = h0 + b
            f = lambda z: float(h(x0 + z)) - target
            lo, hi = -1.0, 1.0
            for _ in range(200):
                if f(lo) < 0 < f(hi) or f(lo) > 0 > f(hi):
                    break
                lo, hi = 2 * lo, 2 * hi
            else:
                continue
            out.append(optimize.brentq(f, lo, hi, xtol=1e-14))
        return out

    return bps


def transform_B_htransform(
    triplet: CharTriplet, h: Callable, dh: Callable, d2h: Callable, X: SamplePath
) -> CharTriplet:
    """Characteristics of Y = h(X) for a C^2 bijection h and a semimartingale X.

    B_bar = 1/2 int h''(X) dC + int h'(X) dB^k
            - int int [k(x) h'(X_-) - k(h(X_- + x) - h(X_-))] nu(ds, dx)
    C_bar = int |h'(X)|^2 dC;  nu_bar = image of nu (see :func:`pushforward`).
    """
    _check_bijective(dh, X)
    grid = triplet.grid
    xs = X.values[:-1]
    dC = np.diff(triplet.C.values)
    dB = np.diff(triplet.B.values)
    k = triplet.k
    corr = kernel_increments(
        triplet.nu, X, lambda x, z: k(z) * dh(x) - k(h(x + z) - h(x)), grid,
        breakpoints=k.breakpoints, state_breakpoints=_h_breakpoints(h, k),
    )
    B_bar = _cumulative(0.5 * d2h(xs) * dC + dh(xs) * dB - corr)
    C_bar = _cumulative(dh(xs) ** 2 * dC)
    nu_bar = ImageKernel(triplet.nu, h)
    return CharTriplet(_path(grid, B_bar), _path(grid, C_bar), nu_bar, k)


@dataclass(frozen=True)
class ImageKernel:
    """Image of a jump kernel under x -> h(X_- + x) - h(X_-), indexed by X's state."""

    base: JumpKernel | AtomKernel
    h: Callable

    def integrate(self, g: Callable, X: SamplePath, grid: TimeGrid, **kw) -> np.ndarray:
        """Per-step int g(h(X_j), y) nu_bar(dy); ``g`` receives the Y-state and Y-jump."""
        h = self.h
        return kernel_increments(self.base, X, lambda x, z: g(h(x), h(x + z) - h(x)), grid, **kw)


# --------------------------------------------------------------------------
# the cut-off route to B_bar


def smooth_step(a):
    """chi(a): 1 for a <= -1, 0 for a >= 0, C-infinity in between."""
    a = np.asarray(a, dtype=float)
    s1 = np.clip(-a, 0.0, None)
    s2 = np.clip(1.0 + a, 0.0, None)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        p1 = np.where(s1 > 0, np.exp(-1.0 / np.where(s1 > 0, s1, 1.0)), 0.0)
        p2 = np.where(s2 > 0, np.exp(-1.0 / np.where(s2 > 0, s2, 1.0)), 0.0)
    return p1 / (p1 + p2)


def smooth_step_derivative(a):
    a = np.asarray(a, dtype=float)
    s1 = np.clip(-a, 0.0, None)
    s2 = np.clip(1.0 + a, 0.0, None)
    inside = (s1 > 0) & (s2 > 0)
    s1i = np.where(inside, s1, 0.5)
    s2i = np.where(inside, s2, 0.5)
    p1 = np.exp(-1.0 / s1i)
    p2 = np.exp(-1.0 / s2i)
    dp1 = -p1 / s1i**2  # d/da of exp(-1/(-a))
    dp2 = p2 / s2i**2
    d = (dp1 * (p1 + p2) - p1 * (dp1 + dp2)) / (p1 + p2) ** 2
    return np.where(inside, d, 0.0)


def _partial_tail(e):
    """int_0^e chi(u - 1) du, by a fixed 32-node rule (integrand smooth)."""
    return gauss_legendre(lambda u: smooth_step(np.multiply.outer(e, u) - 1.0), 0.0, 1.0, order=32) * e


_FULL_TAIL = float(_partial_tail(np.array([1.0]))[0])


class CutoffIdentity:
    """f_N with f_N(0) = 0, f_N' = chi_N(x) = chi(|x| - (N + 1)): equals x on [-N, N], bounded."""

    def __init__(self, N: float):
        self.N = float(N)

    def d1(self, x):
        return smooth_step(np.abs(x) - (self.N + 1))

    def d2(self, x):
        return np.sign(x) * smooth_step_derivative(np.abs(x) - (self.N + 1))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        ax = np.abs(x)
        N = self.N
        out = np.minimum(ax, N)
        excess = np.clip(ax, N, N + 1) - N
        out = out + np.where(excess >= 1.0, _FULL_TAIL, 0.0)
        part = (excess > 0) & (excess < 1.0)
        if np.any(part):
            out[part] += _partial_tail(excess[part])
        return np.sign(x) * out


def b_bar_via_cutoff(
    triplet: CharTriplet, h: Callable, dh: Callable, d2h: Callable, X: SamplePath,
    N_list=(1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024), tol: float = 1e-9,
) -> tuple[np.ndarray, float]:
    """Recover B_bar of Y = h(X) from predictable parts of f_N(h(X)).

    For each N: P_N = ito_compensator(triplet, f_N o h); the increments of
    B_bar follow by subtracting the C_bar and nu_bar terms written for f_N and
    dividing by f_N'(Y).  Stops when successive N agree to ``tol`` in sup-norm.
    Returns (B_bar values, last sup-distance).
    """
    grid = triplet.grid
    k = triplet.k
    ys = np.asarray(h(X.values[:-1]))
    C_bar = np.diff(transform_C(triplet, dh, X))
    bps = _h_breakpoints(h, k)
    prev, dist = None, math.inf
    for N in N_list:
        fN = CutoffIdentity(N)
        if np.any(fN.d1(ys) < 0.5):
            continue
        f = lambda x: fN(h(x))
        df = lambda x: fN.d1(h(x)) * dh(x)
        d2f = lambda x: fN.d2(h(x)) * dh(x) ** 2 + fN.d1(h(x)) * d2h(x)
        P = ito_compensator(triplet, f, df, d2f, X, state_breakpoints=bps)
        jumps_bar = kernel_increments(
            triplet.nu, X,
            lambda x, z: fN(h(x + z)) - fN(h(x)) - k(h(x + z) - h(x)) * fN.d1(h(x)),
            grid, breakpoints=k.breakpoints, state_breakpoints=bps,
        )
        dB = (np.diff(P.values) - 0.5 * fN.d2(ys) * C_bar - jumps_bar) / fN.d1(ys)
        cur = _cumulative(dB)
        if prev is not None:
            dist = float(np.max(np.abs(cur - prev)))
            if dist < tol:
                return cur, dist
        prev = cur
    if prev is None:
        raise ValueError("no cut-off level N covers the path range")
    return prev, dist


def transform_C(triplet: CharTriplet, dv: Callable, X: SamplePath) -> np.ndarray:
    """C_bar = int |v'(X)|^2 dC (cumulative values)."""
    return _cumulative(dv(X.values[:-1]) ** 2 * np.diff(triplet.C.values))


# --------------------------------------------------------------------------
# constructors


def triplet_for_jump_diffusion(spec, X: SamplePath) -> CharTriplet:
    """Triplet of the Euler jump-diffusion along X:
    B^k = int (b + lambda E[k(J)]) ds, C = int sigma^2 ds, nu = lambda(s, X_-) F(dx) ds."""
    grid = X.grid
    t = grid.times[:-1]
    xs = X.values[:-1]
    k = spec.truncation
    drift = spec.b(t, xs) * grid.dt
    comp_k = kernel_increments(spec.jumps, X, lambda x, z: np.broadcast_to(k(z), np.broadcast(x, z).shape),
                               grid, breakpoints=k.breakpoints)
    B = _cumulative(drift + comp_k)
    C = _cumulative(spec.sigma(t, xs) ** 2 * grid.dt)
    return CharTriplet(_path(grid, B), _path(grid, C), spec.jumps, k)


def _series(obj, grid: TimeGrid, X: SamplePath | None, what: str) -> np.ndarray:
    t = grid.times
    if isinstance(obj, (int, float, str)):
        e = Expression(obj)
        vals = e(t, np.zeros_like(t))
        return vals - vals[0]
    if isinstance(obj, dict) and "rate" in obj:
        r = compile_coefficient(obj["rate"])
        xs = X.values if X is not None else np.zeros_like(t)
        return _cumulative(r(t[:-1], xs[:-1]) * grid.dt)
    if isinstance(obj, (list, tuple)):
        vals = np.asarray(obj, dtype=float)
        if vals.shape != t.shape:
            raise ValueError(f"{what} samples must have n_steps + 1 = {t.size} entries")
        return vals
    raise ValueError(f"cannot interpret {what} = {obj!r}")


def triplet_from_json(obj, grid: TimeGrid, X: SamplePath | None = None) -> CharTriplet:
    """Parse ``{"B": ..., "C": ..., "nu": {"intensity", "density", "rate_bound"?}, "k": {...}}``.

    B and C may be expressions in t (closed-form values), ``{"rate": expr(t, x)}``
    (integrated along X), or sample lists on the grid.
    """
    if isinstance(obj, str):
        obj = json.loads(obj)
    k = TruncationFn.from_json(obj.get("k", {"identity_radius": 1.0}))
    nu_obj = obj.get("nu")
    if nu_obj:
        nu = JumpKernel(nu_obj.get("intensity", 0.0), law_from_json(nu_obj["density"]), nu_obj.get("rate_bound"))
    else:
        nu = JumpKernel.none()
    B = _series(obj.get("B", 0.0), grid, X, "B")
    C = _series(obj.get("C", 0.0), grid, X, "C")
    return CharTriplet(_path(grid, B), _path(grid, C), nu, k)
