"""Path and jump-measure data model shared by every other module.

Conventions
-----------
* Grids are uniform: ``t_j = j * dt`` with ``dt = T / n_steps``.
* Paths are right-continuous: ``values[j] = X(t_j)``.  A registered jump at
  index ``j`` is ``X(t_j) - X(t_j-)``; the left limit is therefore
  ``values[j] - size``.
* Registries hold at most one entry per grid index; several events that fall
  in the same grid cell are merged into one jump.
* Per-path seeds come from :func:`split_seed` (splitmix64 finaliser applied to
  ``master_seed + (index + 1) * golden_gamma`` modulo 2**64).  The finaliser is
  a bijection of 64-bit words, so seeds of one ensemble are pairwise distinct.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


# --------------------------------------------------------------------------
# grid


@dataclass(frozen=True)
class TimeGrid:
    T: float
    n_steps: int
    t0: float = 0.0

    def __post_init__(self):
        if self.t0 != 0.0:
            raise ValueError("grids start at t0 = 0")
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ValueError(f"horizon T must be positive and finite, got {self.T}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")
        object.__setattr__(self, "n_steps", int(self.n_steps))
        object.__setattr__(self, "T", float(self.T))

    @classmethod
    def from_dt(cls, T: float, dt: float) -> "TimeGrid":
        n = round(T / dt)
        if n < 1 or abs(n * dt - T) > 1e-9 * T:
            raise ValueError(f"T={T} is not an integer multiple of dt={dt}")
        return cls(T, n)

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def index(self, t: float) -> int:
        """Grid index of a time that must lie on the grid."""
        j = round(t / self.dt)
        if j < 0 or j > self.n_steps or abs(j * self.dt - t) > 1e-9 * max(self.dt, abs(t)):
            raise ValueError(f"time {t} is not a grid point of {self}")
        return j

    def ceil_index(self, t: float) -> int:
        """Smallest grid index with t_j >= t (sub-grid events are rounded up)."""
        j = math.ceil(t / self.dt - 1e-9)
        return min(max(j, 0), self.n_steps)

    def eps_steps(self, eps: float) -> int:
        """Number of grid steps m with eps = m * dt (eps must be a multiple of dt)."""
        m = round(eps / self.dt)
        if m < 1 or abs(m * self.dt - eps) > 1e-9 * eps:
            raise ValueError(f"eps={eps} is not a positive integer multiple of dt={self.dt}")
        return m


# --------------------------------------------------------------------------
# paths and jump measures


@dataclass(frozen=True)
class JumpMeasure:
    """Finite sum of Dirac masses at (time, size) with nonzero sizes."""

    atoms: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        atoms = tuple(sorted((float(t), float(x)) for t, x in self.atoms))
        if any(x == 0.0 for _, x in atoms):
            raise ValueError("jump measure atoms must have nonzero size")
        object.__setattr__(self, "atoms", atoms)

    def __len__(self) -> int:
        return len(self.atoms)

    @property
    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.atoms])

    @property
    def sizes(self) -> np.ndarray:
        return np.array([x for _, x in self.atoms])

    def integrate(self, g: Callable, t: float | None = None) -> float:
        """sum over atoms with time <= t of g(time, size)."""
        return float(sum(g(s, x) for s, x in self.atoms if t is None or s <= t + 1e-12))


def _normalise_registry(jumps, n_steps: int) -> tuple[tuple[int, float], ...]:
    merged: dict[int, float] = {}
    for j, size in jumps:
        j = int(j)
        if not 1 <= j <= n_steps:
            raise ValueError(f"jump index {j} outside 1..{n_steps}")
        merged[j] = merged.get(j, 0.0) + float(size)
    return tuple((j, s) for j, s in sorted(merged.items()) if s != 0.0)


@dataclass(frozen=True)
class SamplePath:
    grid: TimeGrid
    values: np.ndarray
    jumps: tuple[tuple[int, float], ...] | None = ()

    def __post_init__(self):
        values = _readonly(self.values)
        if values.shape != (self.grid.n_steps + 1,):
            raise ValueError(
                f"values must have length n_steps + 1 = {self.grid.n_steps + 1}, got {values.shape}"
            )
        object.__setattr__(self, "values", values)
        if self.jumps is not None:
            object.__setattr__(self, "jumps", _normalise_registry(self.jumps, self.grid.n_steps))

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @property
    def has_registry(self) -> bool:
        return self.jumps is not None

    def jump_array(self) -> np.ndarray:
        """Jump sizes per grid index (zero where no jump is registered)."""
        out = np.zeros(self.grid.n_steps + 1)
        for j, s in self.jumps or ():
            out[j] = s
        return out

    def left_limits(self) -> np.ndarray:
        """X(t_j-) on the grid, with X(0-) = X(0)."""
        return self.values - self.jump_array()

    def __add__(self, other: "SamplePath") -> "SamplePath":
        return _combine(self, other, 1.0)

    def __sub__(self, other: "SamplePath") -> "SamplePath":
        return _combine(self, other, -1.0)

    def scale(self, c: float) -> "SamplePath":
        jumps = None if self.jumps is None else [(j, c * s) for j, s in self.jumps]
        return SamplePath(self.grid, c * self.values, jumps)


def _combine(a: SamplePath, b: SamplePath, sign: float) -> SamplePath:
    if a.grid != b.grid:
        raise ValueError("paths live on different grids")
    if a.jumps is None or b.jumps is None:
        jumps = None
    else:
        jumps = list(a.jumps) + [(j, sign * s) for j, s in b.jumps]
    return SamplePath(a.grid, a.values + sign * b.values, jumps)


def constant_path(grid: TimeGrid, value: float = 0.0) -> SamplePath:
    return SamplePath(grid, np.full(grid.n_steps + 1, float(value)), ())


def deterministic_path(grid: TimeGrid, f: Callable[[np.ndarray], np.ndarray]) -> SamplePath:
    return SamplePath(grid, f(grid.times), ())


# --------------------------------------------------------------------------
# truncation functions


@dataclass(frozen=True)
class TruncationFn:
    """Bounded function with k(x) = x on |x| <= identity_radius.

    ``support_radius`` may be ``inf`` for truncations that are bounded but
    not compactly supported.  ``breakpoints`` lists the points where k may be
    non-smooth (used to split quadrature intervals).
    """

    func: Callable[[np.ndarray], np.ndarray]
    identity_radius: float
    bound: float
    support_radius: float
    breakpoints: tuple[float, ...] = ()
    name: str = "k"

    def __post_init__(self):
        if not self.identity_radius > 0:
            raise ValueError("identity_radius must be positive")
        if self.support_radius < self.identity_radius:
            raise ValueError("support_radius must be at least identity_radius")

    def __call__(self, x):
        return self.func(np.asarray(x, dtype=float))

    @classmethod
    def indicator(cls, a: float = 1.0) -> "TruncationFn":
        """k(x) = x * 1{|x| <= a}."""
        a = float(a)
        return cls(
            lambda x: np.where(np.abs(x) <= a, x, 0.0),
            identity_radius=a,
            bound=a,
            support_radius=a,
            breakpoints=(-a, a),
            name=f"indicator({a:g})",
        )

    @classmethod
    def clip(cls, a: float = 1.0) -> "TruncationFn":
        """k(x) = max(-a, min(a, x)); bounded, not compactly supported."""
        a = float(a)
        return cls(
            lambda x: np.clip(x, -a, a),
            identity_radius=a,
            bound=a,
            support_radius=math.inf,
            breakpoints=(-a, a),
            name=f"clip({a:g})",
        )

    @classmethod
    def ramp(cls, a0: float = 1.0, a1: float = 2.0) -> "TruncationFn":
        """Continuous, compactly supported: identity on [-a0, a0], linear decay to 0 at a1."""
        a0, a1 = float(a0), float(a1)
        if not a1 > a0:
            raise ValueError("ramp needs a1 > a0")

        def f(x):
            ax = np.abs(x)
            return np.where(ax <= a0, x, np.where(ax < a1, np.sign(x) * a0 * (a1 - ax) / (a1 - a0), 0.0))

        return cls(f, a0, a0, a1, (-a1, -a0, a0, a1), name=f"ramp({a0:g},{a1:g})")

    @classmethod
    def from_json(cls, obj: dict) -> "TruncationFn":
        a0 = float(obj["identity_radius"])
        a1 = float(obj.get("support_radius", a0))
        if a1 == a0:
            return cls.indicator(a0)
        if math.isinf(a1):
            return cls.clip(a0)
        return cls.ramp(a0, a1)

    def to_json(self) -> dict:
        return {"identity_radius": self.identity_radius, "support_radius": self.support_radius}

    def check(self, n_probe: int = 2001) -> None:
        """Validate the identity and boundedness properties on a probe grid."""
        r = self.support_radius if math.isfinite(self.support_radius) else 10 * self.identity_radius
        probe = np.linspace(-2 * r, 2 * r, n_probe)
        inner = probe[np.abs(probe) <= self.identity_radius]
        if not np.allclose(self(inner), inner, rtol=0, atol=1e-14):
            raise ValueError(f"{self.name}: k(x) != x inside the identity radius")
        if np.max(np.abs(self(probe))) > self.bound + 1e-12:
            raise ValueError(f"{self.name}: |k| exceeds declared bound {self.bound}")
        if math.isfinite(self.support_radius):
            outer = probe[np.abs(probe) > self.support_radius]
            if np.any(self(outer) != 0):
                raise ValueError(f"{self.name}: k nonzero outside support radius")


# --------------------------------------------------------------------------
# ensembles


@dataclass(frozen=True)
class PathEnsemble:
    """N paths on a shared grid, stored as one (N, n_steps + 1) matrix.

    The jump registry is kept in flat arrays ``jump_path``, ``jump_index`` and
    ``jump_size``.  ``ground_truth`` maps a component name (``"Xc"``, ``"W"``,
    ``"compensator"``, ...) to an array of the same shape as ``values``.
    """

    grid: TimeGrid
    values: np.ndarray
    seeds: tuple[int, ...]
    jump_path: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    jump_index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    jump_size: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ground_truth: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    has_registry: bool = True

    def __post_init__(self):
        values = _readonly(self.values)
        if values.ndim != 2 or values.shape[1] != self.grid.n_steps + 1:
            raise ValueError("values must have shape (n_paths, n_steps + 1)")
        object.__setattr__(self, "values", values)
        if len(self.seeds) != values.shape[0]:
            raise ValueError("one seed per path required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("per-path seeds must be pairwise distinct")
        jp = np.asarray(self.jump_path, dtype=np.int64)
        ji = np.asarray(self.jump_index, dtype=np.int64)
        js = np.asarray(self.jump_size, dtype=float)
        if not (jp.shape == ji.shape == js.shape):
            raise ValueError("registry arrays must have equal length")
        keep = js != 0.0
        jp, ji, js = jp[keep], ji[keep], js[keep]
        if ji.size and (ji.min() < 1 or ji.max() > self.grid.n_steps):
            raise ValueError("registered jump index outside 1..n_steps")
        order = np.lexsort((ji, jp))
        for name, arr in (("jump_path", jp[order]), ("jump_index", ji[order]), ("jump_size", js[order])):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        gt = {}
        for name, arr in self.ground_truth.items():
            arr = _readonly(arr)
            if arr.shape != values.shape:
                raise ValueError(f"ground truth {name!r} must match the ensemble shape")
            gt[name] = arr
        object.__setattr__(self, "ground_truth", gt)

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    def jump_matrix(self) -> np.ndarray:
        """Registered jump sizes as a dense (N, n_steps + 1) array."""
        out = np.zeros_like(self.values)
        np.add.at(out, (self.jump_path, self.jump_index), self.jump_size)
        return out

    def left_limits(self) -> np.ndarray:
        return self.values - self.jump_matrix()

    def atom_counts(self) -> np.ndarray:
        return np.bincount(self.jump_path, minlength=self.n_paths)

    def path(self, i: int) -> SamplePath:
        if not self.has_registry:
            return SamplePath(self.grid, self.values[i], None)
        sel = self.jump_path == i
        return SamplePath(self.grid, self.values[i], list(zip(self.jump_index[sel], self.jump_size[sel])))

    @property
    def paths(self) -> list[SamplePath]:
        return [self.path(i) for i in range(self.n_paths)]

    def truth(self, name: str) -> np.ndarray:
        if name not in self.ground_truth:
            raise KeyError(f"ensemble carries no ground truth {name!r} (have {sorted(self.ground_truth)})")
        return self.ground_truth[name]

    def truth_path(self, name: str, i: int) -> SamplePath:
        return SamplePath(self.grid, self.truth(name)[i], ())

    def subset(self, idx) -> "PathEnsemble":
        idx = np.asarray(idx, dtype=np.int64)
        remap = -np.ones(self.n_paths, dtype=np.int64)
        remap[idx] = np.arange(idx.size)
        sel = np.isin(self.jump_path, idx)
        return PathEnsemble(
            self.grid,
            self.values[idx],
            tuple(self.seeds[i] for i in idx),
            remap[self.jump_path[sel]],
            self.jump_index[sel],
            self.jump_size[sel],
            {k: v[idx] for k, v in self.ground_truth.items()},
            dict(self.metadata),
            self.has_registry,
        )

    @classmethod
    def from_paths(cls, paths: Sequence[SamplePath], seeds: Sequence[int] | None = None, **kw) -> "PathEnsemble":
        grid = paths[0].grid
        if any(p.grid != grid for p in paths):
            raise ValueError("all paths must share the grid")
        jp, ji, js = [], [], []
        for i, p in enumerate(paths):
            for j, s in p.jumps or ():
                jp.append(i)
                ji.append(j)
                js.append(s)
        return cls(
            grid,
            np.vstack([p.values for p in paths]),
            tuple(seeds) if seeds is not None else tuple(range(len(paths))),
            np.array(jp, dtype=np.int64),
            np.array(ji, dtype=np.int64),
            np.array(js, dtype=float),
            has_registry=all(p.has_registry for p in paths),
            **kw,
        )


def concat_ensembles(parts: Sequence[PathEnsemble]) -> PathEnsemble:
    """Stack ensembles on the same grid (path order preserved)."""
    grid = parts[0].grid
    offset = 0
    jp, ji, js, values, seeds = [], [], [], [], []
    names = set(parts[0].ground_truth)
    for part in parts:
        if part.grid != grid or set(part.ground_truth) != names:
            raise ValueError("ensembles are not compatible")
        jp.append(part.jump_path + offset)
        ji.append(part.jump_index)
        js.append(part.jump_size)
        values.append(part.values)
        seeds.extend(part.seeds)
        offset += part.n_paths
    gt = {name: np.vstack([p.ground_truth[name] for p in parts]) for name in names}
    return PathEnsemble(
        grid,
        np.vstack(values),
        tuple(seeds),
        np.concatenate(jp),
        np.concatenate(ji),
        np.concatenate(js),
        gt,
        dict(parts[0].metadata),
        all(p.has_registry for p in parts),
    )


# --------------------------------------------------------------------------
# seeding


def split_seed(master_seed: int, index: int) -> int:
    """Per-path seed: splitmix64 finaliser of master_seed + (index + 1) * gamma."""
    z = (int(master_seed) + (int(index) + 1) * GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def path_seeds(master_seed: int, n_paths: int, start: int = 0) -> tuple[int, ...]:
    return tuple(split_seed(master_seed, i) for i in range(start, start + n_paths))


def seeded_ensemble(spec, n_paths: int, master_seed: int, workers: int = 1) -> PathEnsemble:
    """Generate a deterministic ensemble from a generator spec (dict or JSON object).

    Thin wrapper over :func:`dirichlet_lab.simulate.generate`; results do not
    depend on ``workers``.
    """
    from .simulate import generate

    return generate(spec, n_paths=n_paths, master_seed=master_seed, workers=workers)


# --------------------------------------------------------------------------
# operations


def extract_jumps(path: SamplePath, threshold: float = 0.0) -> JumpMeasure:
    """Atoms with |size| > threshold.

    Uses the registry when present; for registry-less (imported) paths, grid
    increments above the threshold are reported as detected jumps.
    """
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    dt = path.grid.dt
    if path.jumps is not None:
        return JumpMeasure(tuple((j * dt, s) for j, s in path.jumps if abs(s) > threshold))
    inc = np.diff(path.values)
    idx = np.nonzero((np.abs(inc) > threshold) & (inc != 0))[0] + 1
    return JumpMeasure(tuple((j * dt, float(inc[j - 1])) for j in idx))


def map_path(path: SamplePath, v: Callable) -> SamplePath:
    """Y_t = v(t, X_t), with jumps v(t, X_t- + dX) - v(t, X_t-)."""
    t = path.times
    values = np.asarray(v(t, path.values), dtype=float)
    if path.jumps is None:
        return SamplePath(path.grid, values, None)
    jumps = []
    for j, s in path.jumps:
        left = path.values[j] - s
        dy = float(v(t[j], left + s) - v(t[j], left))
        jumps.append((j, dy))
    return SamplePath(path.grid, values, jumps)


def map_ensemble(ens: PathEnsemble, v: Callable) -> PathEnsemble:
    """Vectorised :func:`map_path` over an ensemble (ground truth dropped)."""
    t = ens.grid.times
    values = np.asarray(v(t[None, :], ens.values), dtype=float)
    tj = t[ens.jump_index]
    right = ens.values[ens.jump_path, ens.jump_index]
    left = right - ens.jump_size
    dy = np.asarray(v(tj, right), dtype=float) - np.asarray(v(tj, left), dtype=float)
    return PathEnsemble(
        ens.grid, values, ens.seeds, ens.jump_path, ens.jump_index, dy,
        metadata=dict(ens.metadata), has_registry=ens.has_registry,
    )


# --------------------------------------------------------------------------
# CSV


CSV_COLUMNS = ("run_id", "t", "value", "is_jump", "jump_size")


def write_paths_csv(target, paths: PathEnsemble | Iterable[SamplePath]) -> None:
    """Write paths in long form: run_id,t,value,is_jump,jump_size."""
    if isinstance(paths, PathEnsemble):
        paths = paths.paths
    own = isinstance(target, (str, Path))
    fh = open(target, "w", newline="", encoding="utf-8") if own else target
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for run_id, p in enumerate(paths):
            jumps = p.jump_array()
            for j, (t, x) in enumerate(zip(p.times, p.values)):
                flag = int(jumps[j] != 0.0)
                w.writerow([run_id, repr(float(t)), repr(float(x)), flag, repr(float(jumps[j]))])
    finally:
        if own:
            fh.close()


def read_paths_csv(source, trust_registry: bool = True) -> list[SamplePath]:
    """Read long-form CSV paths.  Each run must be on a uniform grid from 0.

    With ``trust_registry=False`` the is_jump/jump_size columns are ignored and
    paths come back registry-less (jump detection then falls back to
    thresholding increments).
    """
    own = isinstance(source, (str, Path))
    fh = open(source, newline="", encoding="utf-8") if own else source
    try:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != CSV_COLUMNS:
            raise ValueError(f"CSV header must be {','.join(CSV_COLUMNS)}, got {reader.fieldnames}")
        runs: dict[str, list] = {}
        for lineno, row in enumerate(reader, start=2):
            try:
                rec = (float(row["t"]), float(row["value"]), int(row["is_jump"]), float(row["jump_size"]))
            except (TypeError, ValueError) as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
            runs.setdefault(row["run_id"], []).append(rec)
    finally:
        if own:
            fh.close()
    out = []
    for run_id, rows in runs.items():
        rows.sort(key=lambda r: r[0])
        t = np.array([r[0] for r in rows])
        n = len(t) - 1
        if n < 1 or t[0] != 0.0:
            raise ValueError(f"run {run_id}: grid must start at 0 and have at least two points")
        grid = TimeGrid(float(t[-1]), n)
        if not np.allclose(t, grid.times, rtol=0, atol=1e-9 * grid.T):
            raise ValueError(f"run {run_id}: time grid is not uniform")
        values = [r[1] for r in rows]
        jumps = [(j, r[3]) for j, r in enumerate(rows) if r[2]] if trust_registry else None
        out.append(SamplePath(grid, values, jumps))
    return out


def paths_to_csv_string(paths) -> str:
    buf = io.StringIO()
    write_paths_csv(buf, paths)
    return buf.getvalue()
