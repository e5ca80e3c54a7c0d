"""Piecewise deterministic Markov processes on [0, 1].

Local characteristics (h, lambda, Q): the state follows the flow g' = h(g)
between jumps, jumps at rate lambda(X_{s-}) in the interior, and is forced to
jump when the flow reaches 0 or 1.  Post-jump states are drawn from Q(y, .)
on ]0, 1[.  The counter p* counts jumps taken from the boundary.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass

import numpy as np
from scipy import special

from .core import PathEnsemble, SamplePath, TimeGrid
from .expr import Expression
from .mtgcheck import OperatorPair, OperatorSpec, TestFunction
from .quadrature import QuadratureError, adaptive_gauss_legendre
from .simulate import JUMP_TIME_ROUNDING, ThinningError, _chunked, _rngs

ESCAPE_TOL = 1e-9
RK4_SUBSTEPS = 4
GENERATOR_RTOL = 1e-8
_EDGE = 1e-15  # post-jump states are kept in [_EDGE, 1 - _EDGE]


class FlowEscapeError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# post-jump kernels


class PostJumpKernel:
    """Q(y, dz) on ]0, 1[: sampler plus quadrature of z -> g(y, z)."""

    family = "kernel"

    def sample(self, y, u):
        raise NotImplementedError

    def expect(self, g, y, *, rtol: float = GENERATOR_RTOL, max_nodes: int = 2**14):
        """int g(z) Q(y, dz) for an array of states y.

        ``g`` receives post-jump states z with y's shape, or with one trailing
        quadrature axis added; it must broadcast its own y-dependent terms.
        """
        raise NotImplementedError

    def to_json(self) -> dict:
        raise NotImplementedError


class _DensityKernel(PostJumpKernel):
    def pdf(self, z):
        raise NotImplementedError

    def expect(self, g, y, *, rtol=GENERATOR_RTOL, max_nodes=2**14):
        y = np.asarray(y, dtype=float)
        try:
            return adaptive_gauss_legendre(
                lambda z: np.asarray(g(z.reshape((1,) * y.ndim + z.shape)), dtype=float) * self.pdf(z),
                0.0, 1.0, rtol=rtol, max_nodes=max_nodes,
            )
        except QuadratureError as exc:
            raise QuadratureError(f"post-jump quadrature did not converge: {exc}") from None


class UniformQ(_DensityKernel):
    family = "uniform"

    def pdf(self, z):
        return np.ones_like(z)

    def sample(self, y, u):
        return np.clip(np.asarray(u, dtype=float) + 0.0 * np.asarray(y), _EDGE, 1 - _EDGE)

    def to_json(self):
        return {"family": "uniform"}


@dataclass(frozen=True)
class BetaQ(_DensityKernel):
    a: float
    b: float
    family = "beta"

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError("beta post-jump law needs a, b > 0")

    def pdf(self, z):
        z = np.asarray(z, dtype=float)
        return np.exp((self.a - 1) * np.log(z) + (self.b - 1) * np.log1p(-z) - special.betaln(self.a, self.b))

    def sample(self, y, u):
        z = special.betaincinv(self.a, self.b, np.asarray(u, dtype=float))
        return np.clip(z + 0.0 * np.asarray(y), _EDGE, 1 - _EDGE)

    def to_json(self):
        return {"family": "beta", "a": self.a, "b": self.b}


class PointMassQ(PostJumpKernel):
    """Q(y, .) = delta_{at(y)}; ``at`` is an expression in x."""

    family = "point_mass"

    def __init__(self, at):
        self.at_text = str(at)
        self.at = Expression(at)
        probe = self.at(0.0, np.linspace(0.0, 1.0, 1001))
        if np.any(probe <= 0) or np.any(probe >= 1):
            raise ValueError(f"point-mass target {self.at_text!r} must map [0, 1] into ]0, 1[")

    def sample(self, y, u):
        return self.at(0.0, np.asarray(y, dtype=float))

    def expect(self, g, y, *, rtol=GENERATOR_RTOL, max_nodes=2**14):
        y = np.asarray(y, dtype=float)
        return np.asarray(g(self.at(0.0, y)), dtype=float)

    def to_json(self):
        return {"family": "point_mass", "at": self.at_text}


_BETA_TEXT = re.compile(r"^\s*beta\s*\(\s*([^,]+)\s*,\s*([^)]+)\)\s*$")


def post_jump_from_json(obj) -> PostJumpKernel:
    if isinstance(obj, str):
        m = _BETA_TEXT.match(obj)
        if m:
            return BetaQ(float(m.group(1)), float(m.group(2)))
        obj = {"family": obj}
    fam = obj.get("family")
    if fam == "uniform":
        return UniformQ()
    if fam == "point_mass":
        return PointMassQ(obj.get("at", 0.5))
    if fam == "beta":
        return BetaQ(float(obj["a"]), float(obj["b"]))
    raise ValueError(f"unknown post-jump family {fam!r}; use uniform, point_mass or beta(a,b)")


# --------------------------------------------------------------------------
# process specification


class PdmpSpec:
    """(h, lambda, Q) with the dominating rate and the declared Lipschitz constant of h."""

    def __init__(self, flow, hazard, rate_bound: float, post_jump: PostJumpKernel, lipschitz: float):
        self.flow_text, self.hazard_text = str(flow), str(hazard)
        self.h = Expression(flow)
        self.lam = Expression(hazard)
        for name, e in (("flow", self.h), ("hazard", self.lam)):
            if "t" in {str(s) for s in e.sym.free_symbols}:
                raise ValueError(f"PDMP {name} must be time-homogeneous (function of x only)")
        self.rate_bound = float(rate_bound)
        self.post_jump = post_jump
        self.lipschitz = float(lipschitz)
        if not (math.isfinite(self.rate_bound) and self.rate_bound >= 0):
            raise ValueError("rate_bound must be finite and nonnegative")
        probe = np.linspace(0.0, 1.0, 4001)[1:-1]
        lam = self.lam(0.0, probe)
        if np.any(lam < 0) or np.any(lam > self.rate_bound * (1 + 1e-12)):
            i = int(np.argmax((lam < 0) | (lam > self.rate_bound)))
            raise ValueError(f"hazard {lam[i]:.6g} at x={probe[i]:.6g} outside [0, rate_bound={self.rate_bound}]")
        hv = self.h(0.0, probe)
        slope = np.max(np.abs(np.diff(hv)) / np.diff(probe))
        if slope > self.lipschitz * (1 + 1e-6) + 1e-12:
            raise ValueError(f"flow slope {slope:.6g} exceeds the declared Lipschitz constant {self.lipschitz}")

    def hazard(self, x):
        """lambda extended by zero to the boundary."""
        x = np.asarray(x, dtype=float)
        return np.where((x > 0) & (x < 1), self.lam(0.0, x), 0.0)

    def to_json(self) -> dict:
        return {"kind": "pdmp", "flow": self.flow_text, "hazard": self.hazard_text,
                "rate_bound": self.rate_bound, "post_jump": self.post_jump.to_json(), "lipschitz": self.lipschitz}


def pdmp_spec_from_json(obj) -> PdmpSpec:
    if isinstance(obj, str):
        obj = json.loads(obj)
    try:
        return PdmpSpec(obj.get("flow", "0"), obj.get("hazard", "0"), obj["rate_bound"],
                        post_jump_from_json(obj.get("post_jump", "uniform")), obj.get("lipschitz", 1.0))
    except KeyError as exc:
        raise ValueError(f"PDMP spec missing field {exc.args[0]!r}") from None


# --------------------------------------------------------------------------
# simulation


@dataclass(frozen=True)
class PdmpPath:
    path: SamplePath
    pstar: SamplePath


def pdmp_path(ens: PathEnsemble, i: int) -> PdmpPath:
    return PdmpPath(ens.path(i), ens.truth_path("pstar", i))


def _rk4(h, y, dt):
    k1 = h(0.0, y)
    k2 = h(0.0, y + 0.5 * dt * k1)
    k3 = h(0.0, y + 0.5 * dt * k2)
    k4 = h(0.0, y + dt * k3)
    return y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def flow(spec: PdmpSpec, x, t: float, substeps: int = RK4_SUBSTEPS):
    """Phi(t, x) by RK4 with ``substeps`` equal steps (no boundary handling)."""
    y = np.asarray(x, dtype=float)
    for _ in range(substeps):
        y = _rk4(spec.h, y, t / substeps)
    return y


def _hit(spec, y, hs):
    """Bisect the RK4 step length at which the flow from y leaves [0, 1]; returns the boundary value."""
    end = _rk4(spec.h, y, np.full_like(y, hs))
    bval = np.where(end > 1.0, 1.0, 0.0)
    lo, hi = np.zeros_like(y), np.full_like(y, hs)
    sign = np.where(bval == 1.0, 1.0, -1.0)
    gap = np.abs(end - bval)
    for _ in range(60):
        if np.all(gap <= 0.1 * ESCAPE_TOL):
            break
        mid = 0.5 * (lo + hi)
        out = _rk4(spec.h, y, mid)
        outside = (out - bval) * sign >= 0
        hi = np.where(outside, mid, hi)
        lo = np.where(outside, lo, mid)
        gap = np.where(outside, np.abs(out - bval), gap)
    if np.any(gap > ESCAPE_TOL):
        i = int(np.argmax(gap))
        raise FlowEscapeError(
            f"flow from x={y[i]:.6g} leaves [0, 1] by {gap[i]:.3e} (> {ESCAPE_TOL}) before the boundary could be located"
        )
    return bval


def _draws(rngs, n, dt, rate_bound):
    """Per-path draws in order: candidate counts, accept uniforms, candidate post-jump
    uniforms, forced post-jump uniforms.  Candidates come back sorted by (step, path)."""
    cp, cs, ua, uq, forced = [], [], [], [], []
    for i, r in enumerate(rngs):
        c = r.poisson(rate_bound * dt, n) if rate_bound > 0 else np.zeros(n, dtype=np.int64)
        steps = np.repeat(np.arange(n), c)
        cp.append(np.full(steps.size, i))
        cs.append(steps)
        ua.append(r.random(steps.size))
        uq.append(r.random(steps.size))
        forced.append(r.random(n))
    cp, cs, ua, uq = (np.concatenate(a) for a in (cp, cs, ua, uq))
    order = np.lexsort((cp, cs))  # stable: keeps per-path draw order within a step
    return cp[order], cs[order], ua[order], uq[order], np.array(forced)


def _simulate(spec: PdmpSpec, x0: float, grid: TimeGrid, seeds):
    rngs = _rngs(seeds)
    n, dt = grid.n_steps, grid.dt
    P = len(seeds)
    cp, cs, ua, uq, forced = _draws(rngs, n, dt, spec.rate_bound)
    bounds = np.searchsorted(cs, np.arange(n + 1))
    X = np.empty((P, n + 1))
    pstar = np.zeros((P, n + 1))
    events = np.zeros((P, n + 1))
    comp = np.zeros((P, n + 1))
    X[:, 0] = x0
    hs = dt / RK4_SUBSTEPS
    jp, ji, js = [], [], []
    for j in range(n):
        x = X[:, j]
        on_b = (x <= 0.0) | (x >= 1.0)
        lam_raw = spec.lam(0.0, x)
        bad = ~on_b & ((lam_raw > spec.rate_bound * (1 + 1e-12)) | (lam_raw < 0) | ~np.isfinite(lam_raw))
        if np.any(bad):
            i = int(np.argmax(bad))
            raise ThinningError(f"hazard {lam_raw[i]:.6g} at state x={x[i]:.6g} violates rate_bound {spec.rate_bound}")
        lam = np.where(on_b, 0.0, lam_raw)
        comp[:, j + 1] = comp[:, j] + lam * dt
        # flow to t_{j+1}-, stopping at the boundary
        y = x.copy()
        stopped = on_b.copy()
        for _ in range(RK4_SUBSTEPS):
            act = np.nonzero(~stopped)[0]
            if act.size == 0:
                break
            ya = y[act]
            nxt = _rk4(spec.h, ya, hs)
            out = (nxt <= 0.0) | (nxt >= 1.0)
            if np.any(out):
                nxt[out] = _hit(spec, ya[out], hs)
                stopped[act[out]] = True
            y[act] = nxt
        left = y.copy()
        n_ev = stopped.astype(float)
        if np.any(stopped):
            y[stopped] = spec.post_jump.sample(left[stopped], forced[stopped, j])
        lo, hi = bounds[j], bounds[j + 1]
        if hi > lo:
            paths = cp[lo:hi]
            take = (ua[lo:hi] * spec.rate_bound < lam[paths]) & ~stopped[paths]
            paths, u = paths[take], uq[lo:hi][take]
            # successive accepted events of one path within the step are applied in order
            first = np.r_[True, paths[1:] != paths[:-1]] if paths.size else np.zeros(0, dtype=bool)
            rank = np.arange(paths.size) - np.maximum.accumulate(np.where(first, np.arange(paths.size), 0))
            for r in range(int(rank.max()) + 1 if rank.size else 0):
                sel = rank == r
                pr = paths[sel]
                y[pr] = spec.post_jump.sample(y[pr], u[sel])
                n_ev[pr] += 1
        pstar[:, j + 1] = pstar[:, j] + stopped
        events[:, j + 1] = events[:, j] + n_ev
        jump = y - left
        hit = np.nonzero(jump)[0]
        if hit.size:
            jp.append(hit)
            ji.append(np.full(hit.size, j + 1))
            js.append(jump[hit])
        X[:, j + 1] = y
    cat = lambda parts, dtype: np.concatenate(parts).astype(dtype) if parts else np.zeros(0, dtype=dtype)
    meta = {"scheme": f"rk4 x{RK4_SUBSTEPS} substeps + thinning (left-point hazard)",
            "jump_time_rounding": JUMP_TIME_ROUNDING,
            "boundary_rounding": "boundary hits are snapped to the next grid point"}
    gt = {"pstar": pstar, "events": events, "compensator": comp}
    return PathEnsemble(grid, X, tuple(seeds), cat(jp, np.int64), cat(ji, np.int64), cat(js, float), gt, meta)


def simulate_pdmp(spec: PdmpSpec, x0: float, grid: TimeGrid, n_paths: int, seed: int, workers: int = 1) -> PathEnsemble:
    """Ensemble of PDMP paths.

    Ground truth: ``pstar`` (jumps from the boundary), ``events`` (all jump
    epochs T_n, including those whose post-jump state equals the pre-jump
    state and hence leave no registry entry) and ``compensator`` (int lambda ds).
    """
    if not 0.0 <= x0 <= 1.0:
        raise ValueError(f"x0={x0} must lie in [0, 1]")
    return _chunked(lambda seeds: _simulate(spec, float(x0), grid, seeds), n_paths, seed, workers)


# --------------------------------------------------------------------------
# the extended generator


def _increment_integral(spec: PdmpSpec, s, y, v: TestFunction):
    """int (v(s, z) - v(s, y)) Q(y, dz) for equal-shaped arrays s, y."""
    s = np.asarray(s, dtype=float)
    y = np.asarray(y, dtype=float)
    vy = v(s, y)
    if isinstance(spec.post_jump, _DensityKernel):
        # Q does not depend on y: integrate once per distinct time
        su, inv = np.unique(s, return_inverse=True)
        mean = spec.post_jump.expect(lambda z: v(su.reshape(su.shape + (1,) * (z.ndim - 1)), z), su)
        return mean[inv].reshape(s.shape) - vy

    def g(z):
        extra = (1,) * (z.ndim - y.ndim)
        return v(s.reshape(s.shape + extra), z) - vy.reshape(vy.shape + extra)

    return spec.post_jump.expect(g, y)


def pdmp_generator_spec(spec: PdmpSpec) -> OperatorSpec:
    """Pairs (Lambda_1, ds) and (Lambda_2, dp*)."""

    def lam1(s, y, v):
        y = np.asarray(y, dtype=float)
        out = v.dt(s, y) + spec.h(0.0, y) * v.dx(s, y)
        rate = spec.hazard(y)
        if np.any(rate != 0):
            out = out + rate * _increment_integral(spec, s, y, v)
        return out

    def lam2(s, y, v):
        return _increment_integral(spec, s, y, v)

    return OperatorSpec(
        (OperatorPair(lam1, "lebesgue", name="Lambda_1"), OperatorPair(lam2, "boundary", name="Lambda_2")),
        ("t", "x"), "PDMP generator",
    )


def pdmp_generator(spec: PdmpSpec, v) -> OperatorSpec:
    """The two-pair operator, after checking v's domain and the Q-quadrature on a probe grid."""
    op = pdmp_generator_spec(spec)
    v = TestFunction.coerce(v)
    op.check_domain(v)
    probe = np.linspace(0.0, 1.0, 65)
    _increment_integral(spec, np.zeros_like(probe), probe, v)
    return op
