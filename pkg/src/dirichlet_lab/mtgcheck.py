"""Martingale-problem checks for operators written as sums of pairs (Lambda_i, gamma_i).

For a test function v the process

    M^v_t = v(t, X_t) - v(0, x0) - sum_i int_0^t (Lambda_i v)(s, X_{s-}) gamma_i(ds)

should be a martingale.  :func:`build_Mv` evaluates M^v on the grid;
:func:`martingale_test` checks E[(M_t - M_s) g(X^s)] = 0 over a dictionary
of adapted weights g with a Bonferroni-corrected z-test.
"""

from __future__ import annotations

import csv
import inspect
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats

from .core import PathEnsemble, SamplePath, TimeGrid
from .expr import Expression, compile_coefficient
from .laws import JumpKernel

CAVEAT = (
    "caveat: solutions of the martingale problem are defined through local martingality; "
    "a finite-sample statistical test cannot distinguish local from true martingales"
)
MEASURES = ("lebesgue", "boundary", "atoms")
REPORT_COLUMNS = ("v_id", "g_id", "s", "t", "stat", "se", "z", "reject")
# evaluate Markovian operators on at most this many states per call
_CHUNK = 200_000


class DomainError(ValueError):
    """Test function outside the operator's declared domain."""


# --------------------------------------------------------------------------
# test functions


class TestFunction:
    """A function v(t, x) bundled with the derivatives an operator may need.

    Missing derivatives raise :class:`DomainError` when requested.  Linear
    combinations keep every derivative that both operands provide.
    """

    __test__ = False  # not a pytest class

    def __init__(self, f: Callable, dt: Callable | None = None, dx: Callable | None = None,
                 dxx: Callable | None = None, name: str = "v"):
        self.f = f
        self._d = {"t": dt, "x": dx, "xx": dxx}
        self.name = name

    @classmethod
    def from_expression(cls, text: str, name: str | None = None) -> "TestFunction":
        e = Expression(text)
        return cls(e, e.diff("t"), e.diff("x"), e.diff("x", 2), name or str(text))

    @classmethod
    def coerce(cls, v) -> "TestFunction":
        if isinstance(v, TestFunction):
            return v
        if isinstance(v, (str, int, float)):
            return cls.from_expression(str(v))
        raise TypeError(f"cannot use {v!r} as a test function")

    def __call__(self, t, x):
        return np.asarray(self.f(t, x), dtype=float)

    def derivative(self, which: str):
        d = self._d[which]
        if d is None:
            raise DomainError(f"test function {self.name!r} has no d/d{which} derivative")
        return d

    def dt(self, t, x):
        return np.asarray(self.derivative("t")(t, x), dtype=float)

    def dx(self, t, x):
        return np.asarray(self.derivative("x")(t, x), dtype=float)

    def dxx(self, t, x):
        return np.asarray(self.derivative("xx")(t, x), dtype=float)

    def provides(self, which: str) -> bool:
        return self._d[which] is not None

    def at_time(self, s) -> "Slice":
        return Slice(self, s)

    def _combine(self, other: "TestFunction", a: float, b: float) -> "TestFunction":
        def lin(f, g):
            if f is None or g is None:
                return None
            return lambda t, x: a * np.asarray(f(t, x)) + b * np.asarray(g(t, x))

        return TestFunction(
            lin(self.f, other.f), *(lin(self._d[k], other._d[k]) for k in ("t", "x", "xx")),
            name=f"{a}*{self.name}+{b}*{other.name}",
        )

    def __add__(self, other):
        return self._combine(TestFunction.coerce(other), 1.0, 1.0)

    def __sub__(self, other):
        return self._combine(TestFunction.coerce(other), 1.0, -1.0)

    def __mul__(self, c: float):
        c = float(c)

        def sc(f):
            return None if f is None else (lambda t, x: c * np.asarray(f(t, x)))

        return TestFunction(sc(self.f), *(sc(self._d[k]) for k in ("t", "x", "xx")), name=f"{c}*{self.name}")

    __rmul__ = __mul__

    def __repr__(self):
        return f"TestFunction({self.name!r})"


@dataclass(frozen=True)
class Slice:
    """x -> v(s, x) at a fixed (possibly array-valued) time s, with x-derivatives."""

    v: TestFunction
    s: object

    def __call__(self, x):
        return self.v(self.s, x)

    def d1(self, x):
        return self.v.dx(self.s, x)

    def d2(self, x):
        return self.v.dxx(self.s, x)


# --------------------------------------------------------------------------
# operators


@dataclass(frozen=True)
class StoppedPath:
    """Ensemble paths observed up to (and excluding anything after) a stopping index.

    ``values`` holds X at grid indices 0..j; ``left`` is X_{s-} at the
    evaluation time s.  Only this view is handed to operators and weights.
    """

    values: np.ndarray
    left: np.ndarray
    s: float

    @property
    def current(self) -> np.ndarray:
        return self.values[:, -1]

    @property
    def running_max(self) -> np.ndarray:
        return np.max(self.values, axis=1)


@dataclass(frozen=True)
class OperatorPair:
    """One pair (Lambda, gamma).

    Markovian ``Lambda(s, y, v)`` receives equal-shaped arrays of times and
    left-limit states; path-dependent ``Lambda(s, eta, v)`` receives a float
    time and a :class:`StoppedPath`.  ``measure`` is ``lebesgue`` (ds),
    ``boundary`` (dp*, read from the ensemble's ``pstar`` ground truth) or
    ``atoms`` (unit masses at ``atoms`` times).
    """

    Lambda: Callable
    measure: str = "lebesgue"
    atoms: tuple = ()
    markovian: bool = True
    name: str = ""

    def __post_init__(self):
        if self.measure not in MEASURES:
            raise ValueError(f"unknown measure {self.measure!r}; choose from {MEASURES}")


@dataclass(frozen=True)
class OperatorSpec:
    """A finite family of pairs; ``domain`` lists the derivatives v must provide."""

    pairs: tuple[OperatorPair, ...]
    domain: tuple[str, ...] = ("t", "x")
    name: str = "operator"

    def check_domain(self, v: TestFunction) -> None:
        missing = [d for d in self.domain if not v.provides(d)]
        if missing:
            raise DomainError(f"test function {v.name!r} lacks derivatives {missing} required by {self.name}")


def zero_operator() -> OperatorSpec:
    return OperatorSpec((OperatorPair(lambda s, y, v: np.zeros_like(np.asarray(y, dtype=float))),), (), "zero")


def _markov_values(Lam, v, s, y):
    """Lambda on flattened (s, y), evaluated in bounded chunks."""
    s = np.broadcast_to(np.asarray(s, dtype=float), y.shape).ravel()
    yf = np.asarray(y, dtype=float).ravel()
    out = np.empty(yf.size)
    for a in range(0, yf.size, _CHUNK):
        b = min(a + _CHUNK, yf.size)
        out[a:b] = np.broadcast_to(np.asarray(Lam(s[a:b], yf[a:b], v), dtype=float), (b - a,))
    return out.reshape(y.shape)


def _ensemble(X) -> tuple[PathEnsemble, bool]:
    if isinstance(X, SamplePath):
        return PathEnsemble.from_paths([X]), True
    if isinstance(X, PathEnsemble):
        return X, False
    raise TypeError("expected a SamplePath or PathEnsemble")


def compensator_path(op: OperatorSpec, v, X) -> np.ndarray:
    """A_t = sum_i int_0^t Lambda_i v gamma_i(ds) on the grid, shape (P, n+1)."""
    v = TestFunction.coerce(v)
    op.check_domain(v)
    ens, _ = _ensemble(X)
    grid = ens.grid
    t, dt, n = grid.times, grid.dt, grid.n_steps
    vals, left = ens.values, ens.left_limits()
    inc = np.zeros((ens.n_paths, n))
    for pair in op.pairs:
        if pair.measure == "lebesgue":
            if pair.markovian:
                inc += _markov_values(pair.Lambda, v, t[None, :-1], vals[:, :-1]) * dt
            else:
                for j in range(n):
                    eta = StoppedPath(vals[:, : j + 1], vals[:, j], t[j])
                    inc[:, j] += np.asarray(pair.Lambda(t[j], eta, v), dtype=float) * dt
            continue
        if pair.measure == "boundary":
            if "pstar" not in ens.ground_truth:
                raise ValueError("a boundary-counter pair needs the ensemble's 'pstar' ground truth")
            dp = np.diff(ens.truth("pstar"), axis=1)
            p_arr, j_arr = np.nonzero(dp)
            w_arr = dp[p_arr, j_arr]
            j_arr = j_arr + 1
            s_arr = t[j_arr]
        else:
            hits = [(a, grid.ceil_index(a)) for a in pair.atoms]
            hits = [(a, j) for a, j in hits if j >= 1]
            p_arr = np.tile(np.arange(ens.n_paths), len(hits))
            j_arr = np.repeat(np.array([j for _, j in hits], dtype=np.int64), ens.n_paths)
            s_arr = np.repeat(np.array([a for a, _ in hits], dtype=float), ens.n_paths)
            w_arr = np.ones(p_arr.size)
        if p_arr.size == 0:
            continue
        if pair.markovian:
            lam = _markov_values(pair.Lambda, v, s_arr, left[p_arr, j_arr])
        else:
            lam = np.empty(p_arr.size)
            for k, (p, j) in enumerate(zip(p_arr, j_arr)):
                eta = StoppedPath(vals[p : p + 1, :j], left[p : p + 1, j], float(s_arr[k]))
                lam[k] = float(np.asarray(pair.Lambda(float(s_arr[k]), eta, v)).reshape(-1)[0])
        np.add.at(inc, (p_arr, j_arr - 1), w_arr * lam)
    out = np.zeros((ens.n_paths, n + 1))
    out[:, 1:] = np.cumsum(inc, axis=1)
    return out


def build_Mv(op: OperatorSpec, v, X, x0: float | None = None):
    """M^v on the grid: a SamplePath for a single path, an (P, n+1) array for an ensemble."""
    v = TestFunction.coerce(v)
    ens, single = _ensemble(X)
    start = ens.values[:, 0]
    if x0 is not None and np.any(np.abs(start - x0) > 1e-12 * max(1.0, abs(x0))):
        raise ValueError(f"path does not start at x0={x0} (found {float(start[0])})")
    t = ens.grid.times
    Y = v(t[None, :], ens.values)
    M = Y - Y[:, :1] - compensator_path(op, v, ens)
    if single:
        return SamplePath(ens.grid, M[0], None)
    return M


# --------------------------------------------------------------------------
# passage to time-inhomogeneous operators


def _wants_time(L) -> bool:
    try:
        return len(inspect.signature(L).parameters) >= 3
    except (TypeError, ValueError):
        return True


def homogeneous_to_inhomogeneous(L: Callable, markovian: bool = True, domain=("t", "x", "xx"),
                                 name: str = "d/dt + L") -> OperatorSpec:
    """Single pair Lambda v(s, .) = d_t v(s, .) + (L v(s, .))(.), gamma = ds.

    ``L(f, y)`` or ``L(f, s, y)`` acts on a slice ``f = v(s, .)`` (callable
    with ``d1``/``d2``); the three-argument form lets coefficients depend on
    time.  For path-dependent operators ``y`` is a :class:`StoppedPath`.
    """
    timed = _wants_time(L)

    def Lam(s, y, v):
        f = v.at_time(s)
        state = y if markovian else y.current
        Lf = L(f, s, y) if timed else L(f, y)
        return v.dt(s, state) + np.asarray(Lf, dtype=float)

    return OperatorSpec((OperatorPair(Lam, "lebesgue", (), markovian, name),), tuple(domain), name)


def markov_operator(drift="0", diffusion="0", jumps: JumpKernel | None = None) -> Callable:
    """L f(y) = b f' + sigma^2 f''/2 + lambda(s, y) int (f(y + z) - f(y)) F(dz)."""
    b, sig = compile_coefficient(drift), compile_coefficient(diffusion)
    kern = jumps if jumps is not None else JumpKernel.none()

    def L(f, s, y):
        y = np.asarray(y, dtype=float)
        out = b(s, y) * f.d1(y) + 0.5 * sig(s, y) ** 2 * f.d2(y)
        if not kern.is_null:
            fy = f(y)
            jump = kern.law.expect(lambda z: _slice_shift(f, y, z) - fy[..., None])
            out = out + kern.intensity(s, y) * jump
        return out

    return L


def _slice_shift(f: Slice, y, z):
    s = np.asarray(f.s, dtype=float)
    ss = s[..., None] if s.ndim else s
    return f.v(ss, y[..., None] + z)


def bm_generator(vol: float = 1.0) -> OperatorSpec:
    """d/dt + vol^2/2 d^2/dx^2."""
    return homogeneous_to_inhomogeneous(markov_operator("0", str(float(vol))), name=f"BM(vol={vol})")


# --------------------------------------------------------------------------
# JSON


def _term_pair(obj: dict) -> OperatorPair:
    """``{"measure", "terms": {"v"|"t"|"x"|"xx": expr}, "jumps": {...}, "atoms": [...]}``."""
    terms = {k: compile_coefficient(e) for k, e in obj.get("terms", {}).items()}
    bad = set(terms) - {"v", "t", "x", "xx"}
    if bad:
        raise ValueError(f"unknown operator term(s) {sorted(bad)}; use v, t, x, xx")
    kern = JumpKernel.from_json(obj.get("jumps"))

    def Lam(s, y, v):
        out = np.zeros(np.shape(y))
        for k, c in terms.items():
            dv = v(s, y) if k == "v" else v.derivative(k)(s, y)
            out = out + c(s, y) * dv
        if not kern.is_null:
            vy = v(s, y)
            jump = kern.law.expect(lambda z: v(s[..., None], y[..., None] + z) - vy[..., None])
            out = out + kern.intensity(s, y) * jump
        return out

    return OperatorPair(Lam, obj.get("measure", "lebesgue"), tuple(obj.get("atoms", ())), True,
                        obj.get("name", ""))


def operator_from_json(obj) -> OperatorSpec:
    """Operator spec from JSON.

    Forms: ``{"kind": "pdmp", ...PdmpSpec}``, ``{"kind": "jump_diffusion",
    "drift", "diffusion", "jumps"}`` (d/dt + generator), or
    ``{"domain": [...], "pairs": [{"measure", "terms", "jumps", "atoms"}, ...]}``.
    """
    if isinstance(obj, str):
        obj = json.loads(obj)
    kind = obj.get("kind", "pairs")
    if kind == "pdmp":
        from .pdmp import pdmp_generator_spec, pdmp_spec_from_json

        return pdmp_generator_spec(pdmp_spec_from_json(obj))
    if kind == "jump_diffusion":
        L = markov_operator(obj.get("drift", "0"), obj.get("diffusion", "0"), JumpKernel.from_json(obj.get("jumps")))
        return homogeneous_to_inhomogeneous(L, name="jump-diffusion generator")
    if kind != "pairs":
        raise ValueError(f"unknown operator kind {kind!r}; use pairs, jump_diffusion or pdmp")
    pairs = obj.get("pairs")
    if not pairs:
        raise ValueError("operator spec needs a non-empty 'pairs' list")
    return OperatorSpec(tuple(_term_pair(p) for p in pairs), tuple(obj.get("domain", ("t", "x"))),
                        obj.get("name", "operator"))


# --------------------------------------------------------------------------
# the statistical test


def default_weights() -> dict[str, Callable]:
    return {
        "1": lambda eta: np.ones(eta.values.shape[0]),
        "X_s": lambda eta: eta.current,
        "tanh_X_s": lambda eta: np.tanh(eta.current),
        "sup_X": lambda eta: eta.running_max,
    }


def default_checkpoints(grid: TimeGrid) -> list[tuple[float, float]]:
    mid = grid.times[grid.n_steps // 2]
    return [(0.0, float(mid)), (float(mid), grid.T), (0.0, grid.T)]


@dataclass
class MtgTestReport:
    rows: list[dict]
    alpha: float
    z_crit: float
    n_paths: int
    degenerate: list[tuple] = field(default_factory=list)

    @property
    def rejected(self) -> bool:
        return any(r["reject"] for r in self.rows)

    @property
    def verdict(self) -> str:
        return "reject" if self.rejected else "accept"

    def z_scores(self) -> np.ndarray:
        return np.array([r["z"] for r in self.rows])

    def to_csv(self, target) -> None:
        with open(target, "w", newline="", encoding="utf-8") as fh:
            self.write(fh)

    def write(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.rows:
            w.writerow([r["v_id"], r["g_id"], repr(r["s"]), repr(r["t"]), repr(r["stat"]), repr(r["se"]),
                        repr(r["z"]), "true" if r["reject"] else "false"])
        w.writerow([f"# verdict: {self.verdict} (alpha={self.alpha}, Bonferroni z_crit={self.z_crit:.4f})"])
        if self.degenerate:
            w.writerow(["# degenerate (zero variance, excluded): " + "; ".join(
                f"{v}/{g}/({s},{t})" for v, g, s, t in self.degenerate)])
        w.writerow([f"# {CAVEAT}"])


def martingale_test(
    M, X: PathEnsemble, checkpoints=None, weights: dict | None = None, alpha: float = 0.05,
    min_paths: int = 100,
) -> MtgTestReport:
    """Test E[(M_t - M_s) g(X^s)] = 0 for every (v, g, s, t).

    ``M`` is an (P, n+1) array or a dict ``v_id -> array``.  Weights see the
    path stopped at s only.  Products with zero sample variance are flagged
    and excluded from the Bonferroni count; they get z = 0.
    """
    if not isinstance(M, dict):
        M = {"v": M}
    grid = X.grid
    P = X.n_paths
    if P < min_paths:
        raise ValueError(f"martingale_test needs at least {min_paths} paths, got {P}")
    checkpoints = default_checkpoints(grid) if checkpoints is None else list(checkpoints)
    weights = default_weights() if weights is None else weights
    left = X.left_limits()
    raw = []
    for v_id, Mv in M.items():
        Mv = np.asarray(Mv, dtype=float)
        if Mv.shape != X.values.shape:
            raise ValueError(f"M for {v_id!r} has shape {Mv.shape}, expected {X.values.shape}")
        for s, t in checkpoints:
            if not s < t:
                raise ValueError(f"checkpoint needs s < t, got ({s}, {t})")
            js, jt = grid.index(s), grid.index(t)
            eta = StoppedPath(X.values[:, : js + 1], left[:, js], float(s))
            dM = Mv[:, jt] - Mv[:, js]
            for g_id, g in weights.items():
                gv = np.broadcast_to(np.asarray(g(eta), dtype=float), (P,))
                prod = dM * gv
                stat = float(np.mean(prod))
                sd = float(np.std(prod, ddof=1))
                scale = float(np.max(np.abs(prod))) if prod.size else 0.0
                degenerate = not sd > 1e-13 * max(scale, 1e-300)
                se = sd / math.sqrt(P)
                raw.append((str(v_id), str(g_id), float(s), float(t), stat, se, degenerate))
    m = sum(1 for r in raw if not r[-1])
    z_crit = float(stats.norm.ppf(1 - alpha / (2 * max(m, 1))))
    rows, degen = [], []
    for v_id, g_id, s, t, stat, se, d in raw:
        z = 0.0 if d else stat / se
        if not math.isfinite(z):
            raise ArithmeticError(f"non-finite z-score for {v_id}/{g_id}")
        rows.append({"v_id": v_id, "g_id": g_id, "s": s, "t": t, "stat": stat, "se": se, "z": z,
                     "reject": (not d) and abs(z) > z_crit})
        if d:
            degen.append((v_id, g_id, s, t))
    return MtgTestReport(rows, alpha, z_crit, P, degen)
