"""Reference generators with known ground-truth decompositions.

Every generator derives per-path seeds with :func:`core.split_seed` and draws
each path's randomness from its own ``numpy.random.Generator`` in a fixed
order (Gaussian increments, then candidate-event counts, then acceptance and
size uniforms).  Paths are then advanced together, vectorised over the
ensemble, so results do not depend on chunking or worker count.

Scheme choices: Euler for the continuous part; jumps by thinning a
dominating Poisson clock of rate ``rate_bound`` with acceptance probability
``intensity(t_j, X_{t_j}) / rate_bound`` evaluated at the left grid point;
every event in (t_j, t_{j+1}] is placed at t_{j+1} (rounded up).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import PathEnsemble, TimeGrid, TruncationFn, concat_ensembles, path_seeds
from .expr import compile_coefficient
from .laws import JumpKernel, SizeLaw, law_from_json, point

JUMP_TIME_ROUNDING = "events in (t_j, t_j+1] are registered at t_j+1"


class ThinningError(RuntimeError):
    pass


@dataclass
class JumpDiffusionSpec:
    """dX = b(t,X) dt + sigma(t,X) dW + jumps with intensity lambda(t, X_-) and size law F."""

    drift: object = 0.0
    diffusion: object = 0.0
    jumps: JumpKernel = field(default_factory=JumpKernel.none)
    truncation: TruncationFn = field(default_factory=TruncationFn.indicator)
    x0: float = 0.0
    sigma_bound: float | None = None

    def __post_init__(self):
        self.b = compile_coefficient(self.drift)
        self.sigma = compile_coefficient(self.diffusion)
        if not isinstance(self.jumps, JumpKernel):
            raise TypeError("jumps must be a JumpKernel")


def _rngs(seeds):
    return [np.random.default_rng(s) for s in seeds]


def _draw(rngs, n_steps, dt, rate_bound):
    """Per-path draws in the documented order; returns stacked arrays."""
    P = len(rngs)
    normals = np.empty((P, n_steps))
    for i, r in enumerate(rngs):
        normals[i] = r.standard_normal(n_steps)
    cand_path, cand_step, u_acc, u_size = [], [], [], []
    if rate_bound > 0:
        for i, r in enumerate(rngs):
            counts = r.poisson(rate_bound * dt, n_steps)
            steps = np.repeat(np.arange(n_steps), counts)
            k = steps.size
            cand_path.append(np.full(k, i))
            cand_step.append(steps)
            u_acc.append(r.random(k))
            u_size.append(r.random(k))
    if cand_path:
        cp = np.concatenate(cand_path)
        cs = np.concatenate(cand_step)
        ua = np.concatenate(u_acc)
        us = np.concatenate(u_size)
        order = np.argsort(cs, kind="stable")
        cp, cs, ua, us = cp[order], cs[order], ua[order], us[order]
    else:
        cp = cs = np.zeros(0, dtype=np.int64)
        ua = us = np.zeros(0)
    return normals, (cp, cs, ua, us)


def _euler_thinning(spec: JumpDiffusionSpec, grid: TimeGrid, seeds, x0):
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
    sig = np.empty((P, n + 1))
    comp = np.zeros((P, n + 1))
    X[:, 0] = x0
    jp, ji, js = [], [], []
    for j in range(n):
        x = X[:, j]
        s = spec.sigma(t[j], x)
        sig[:, j] = s
        dxc = s * normals[:, j] * sq
        Xc[:, j + 1] = Xc[:, j] + dxc
        xnew = x + spec.b(t[j], x) * dt + dxc
        if not kern.is_null:
            lam = kern.intensity(t[j], x)
            bad = (lam > kern.rate_bound * (1 + 1e-12)) | (lam < 0) | ~np.isfinite(lam)
            if np.any(bad):
                i = int(np.argmax(bad))
                raise ThinningError(
                    f"intensity {lam[i]:.6g} at state x={x[i]:.6g}, t={t[j]:.6g} "
                    f"violates the dominating rate {kern.rate_bound:.6g}"
                )
            comp[:, j + 1] = comp[:, j] + lam * dt
            lo, hi = bounds[j], bounds[j + 1]
            if hi > lo:
                paths = cp[lo:hi]
                acc = ua[lo:hi] * kern.rate_bound < lam[paths]
                if np.any(acc):
                    jump = np.zeros(P)
                    np.add.at(jump, paths[acc], sizes[lo:hi][acc])
                    hit = np.nonzero(jump)[0]
                    xnew = xnew + jump
                    jp.append(hit)
                    ji.append(np.full(hit.size, j + 1))
                    js.append(jump[hit])
        X[:, j + 1] = xnew
    sig[:, n] = spec.sigma(t[n], X[:, n])
    cat = lambda parts, dtype: np.concatenate(parts).astype(dtype) if parts else np.zeros(0, dtype=dtype)
    gt = {"Xc": Xc, "W": W, "sigma": sig, "compensator": comp}
    return PathEnsemble(
        grid, X, tuple(seeds), cat(jp, np.int64), cat(ji, np.int64), cat(js, float), gt,
        {"scheme": "euler+thinning", "jump_time_rounding": JUMP_TIME_ROUNDING},
    )


def _chunked(fn, n_paths, seed, workers):
    """Run ``fn(seeds)`` on contiguous chunks of path indices and stack the results."""
    seeds = path_seeds(seed, n_paths)
    workers = max(1, int(workers))
    if workers == 1 or n_paths < 2 * workers:
        ens = fn(seeds)
    else:
        cuts = np.linspace(0, n_paths, workers + 1).astype(int)
        chunks = [seeds[a:b] for a, b in zip(cuts[:-1], cuts[1:]) if b > a]
        with ThreadPoolExecutor(workers) as pool:
            ens = concat_ensembles(list(pool.map(fn, chunks)))
    ens.metadata.update({"master_seed": int(seed), "seed_rule": "splitmix64(master + (i+1)*0x9E3779B97F4A7C15)"})
    return ens


def gen_jump_diffusion(spec: JumpDiffusionSpec, grid: TimeGrid, n_paths: int, seed: int, workers: int = 1) -> PathEnsemble:
    """Euler scheme plus thinned state-dependent jumps.

    Ground truth: ``Xc`` (= int sigma dW), ``W``, ``sigma`` (sigma at left grid
    points), ``compensator`` (= int intensity ds).
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    return _chunked(lambda s: _euler_thinning(spec, grid, s, spec.x0), n_paths, seed, workers)


def gen_bm(grid: TimeGrid, n_paths: int, seed: int, vol: float = 1.0, x0: float = 0.0, workers: int = 1) -> PathEnsemble:
    """Brownian motion with volatility ``vol``; shares the jump-diffusion code path."""
    if vol < 0:
        raise ValueError("vol must be nonnegative")
    spec = JumpDiffusionSpec(drift=0.0, diffusion=float(vol), x0=x0)
    return gen_jump_diffusion(spec, grid, n_paths, seed, workers)


def gen_compound_poisson(
    grid: TimeGrid, n_paths: int, seed: int, rate: float, sizes: SizeLaw | None = None,
    x0: float = 0.0, workers: int = 1,
) -> PathEnsemble:
    """Compound Poisson process; ground-truth Xc is identically zero."""
    if rate < 0:
        raise ValueError(f"rate must be nonnegative, got {rate}")
    sizes = sizes if sizes is not None else point(1.0)
    spec = JumpDiffusionSpec(jumps=JumpKernel(float(rate), sizes, float(rate)), x0=x0)
    return gen_jump_diffusion(spec, grid, n_paths, seed, workers)


def gen_convolution_example(grid: TimeGrid, n_paths: int, seed: int, workers: int = 1) -> PathEnsemble:
    """X_t = int_0^t B_{t-s} dW_s with independent Brownian motions B and W.

    Discretised as X(t_j) = sum_{i<j} B(t_j - t_i) (W(t_{i+1}) - W(t_i)).
    The process is martingale-orthogonal, so ground-truth ``Xc`` is zero.
    """

    def run(seeds):
        n, dt = grid.n_steps, grid.dt
        P = len(seeds)
        dW = np.empty((P, n))
        B = np.zeros((P, n + 1))
        for i, r in enumerate(_rngs(seeds)):
            dW[i] = r.standard_normal(n) * math.sqrt(dt)
            B[i, 1:] = np.cumsum(r.standard_normal(n) * math.sqrt(dt))
        X = kernels.causal_convolution(B, dW)
        W = np.zeros((P, n + 1))
        W[:, 1:] = np.cumsum(dW, axis=1)
        gt = {"Xc": np.zeros_like(X), "W": W, "B": B}
        return PathEnsemble(grid, X, tuple(seeds), ground_truth=gt, metadata={"scheme": "causal convolution"})

    return _chunked(run, n_paths, seed, workers)


# --------------------------------------------------------------------------
# JSON generator specs

GENERATOR_KINDS = ("bm", "compound_poisson", "jump_diffusion", "convolution", "pdmp", "distdrift")


def grid_from_json(obj: dict) -> TimeGrid:
    if "n_steps" in obj:
        return TimeGrid(float(obj["T"]), int(obj["n_steps"]))
    return TimeGrid.from_dt(float(obj["T"]), float(obj["dt"]))


def jump_diffusion_from_json(obj: dict) -> JumpDiffusionSpec:
    k = TruncationFn.from_json(obj["truncation"]) if "truncation" in obj else TruncationFn.indicator(1.0)
    return JumpDiffusionSpec(
        drift=obj.get("drift", 0.0),
        diffusion=obj.get("diffusion", 0.0),
        jumps=JumpKernel.from_json(obj.get("jumps")),
        truncation=k,
        x0=float(obj.get("x0", 0.0)),
    )


def generate(spec: dict, n_paths: int, master_seed: int, workers: int = 1) -> PathEnsemble:
    """Dispatch a JSON generator spec ``{"kind": ..., "grid": {...}, ...}``."""
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ValueError("generator spec must be an object with a 'kind' field")
    kind = spec["kind"]
    if kind not in GENERATOR_KINDS:
        raise ValueError(f"unknown generator kind {kind!r}; choose from {GENERATOR_KINDS}")
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if "grid" not in spec:
        raise ValueError("generator spec needs a 'grid' object")
    grid = grid_from_json(spec["grid"])
    if kind == "bm":
        vol = float(spec.get("vol", 1.0))
        if vol < 0:
            raise ValueError(f"vol must be nonnegative, got {vol}")
        ens = gen_bm(grid, n_paths, master_seed, vol, float(spec.get("x0", 0.0)), workers)
    elif kind == "compound_poisson":
        rate = float(spec.get("rate", 1.0))
        if rate < 0:
            raise ValueError(f"rate must be nonnegative, got {rate}")
        law = law_from_json(spec.get("law", {"family": "point", "at": 1.0}))
        ens = gen_compound_poisson(grid, n_paths, master_seed, rate, law, float(spec.get("x0", 0.0)), workers)
    elif kind == "jump_diffusion":
        ens = gen_jump_diffusion(jump_diffusion_from_json(spec), grid, n_paths, master_seed, workers)
    elif kind == "convolution":
        ens = gen_convolution_example(grid, n_paths, master_seed, workers)
    elif kind == "pdmp":
        from .pdmp import pdmp_spec_from_json, simulate_pdmp

        ens = simulate_pdmp(pdmp_spec_from_json(spec), float(spec.get("x0", 0.5)), grid, n_paths, master_seed, workers)
    else:
        from .distdrift import distdrift_from_json

        ens = distdrift_from_json(spec, grid, n_paths, master_seed, workers)
    ens.metadata["generator"] = kind
    return ens
