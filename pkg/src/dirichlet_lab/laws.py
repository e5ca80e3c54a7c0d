"""Jump-size laws and state-dependent jump kernels.

A jump kernel describes a compensator of the form
``nu(ds, dx) = intensity(s, X_{s-}) * law(dx) ds``.  Laws sample by inverse
transform from uniforms, so a simulator's randomness is fully determined by
its uniform draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .expr import compile_coefficient
from .quadrature import adaptive_gauss_legendre, batched_adaptive, composite_rule


class SizeLaw:
    """Base class: a probability law on the real line with no atom at 0."""

    name = "law"
    discrete = False

    def ppf(self, u):
        raise NotImplementedError

    def sample(self, u):
        """Inverse-transform sample from uniforms ``u`` in [0, 1)."""
        return self.ppf(np.asarray(u, dtype=float))

    def expect(self, g, *, breakpoints=(), rtol=1e-9, max_nodes=2**14):
        """E[g(J)] where ``g`` maps a node array to (..., n_nodes)."""
        raise NotImplementedError

    def expect_rows(self, g, row_breakpoints, *, rtol=1e-9, max_nodes=2**14):
        """Row-wise E[g(J)] with per-row breakpoints.

        ``row_breakpoints`` is (S, B) (NaN = unused); ``g(z, rows)`` maps a
        (R, M) node array for the row indices ``rows`` to values of that shape.
        """
        raise NotImplementedError

    def rule(self, breakpoints=()):
        """Fixed nodes/weights with sum(w * g(nodes)) ~ E[g(J)] (integrand-independent)."""
        raise NotImplementedError

    def to_json(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Discrete(SizeLaw):
    atoms: tuple[float, ...]
    probs: tuple[float, ...]

    discrete = True

    def __post_init__(self):
        atoms = tuple(float(a) for a in self.atoms)
        probs = tuple(float(p) for p in self.probs)
        if len(atoms) != len(probs) or not atoms:
            raise ValueError("discrete law needs matching non-empty atoms and probs")
        if any(a == 0.0 for a in atoms):
            raise ValueError("jump sizes must be nonzero")
        if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-12:
            raise ValueError("probabilities must be nonnegative and sum to 1")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "probs", probs)

    @property
    def name(self):
        return "point" if len(self.atoms) == 1 else "discrete"

    def ppf(self, u):
        cum = np.cumsum(self.probs)
        idx = np.searchsorted(cum, u, side="right")
        return np.asarray(self.atoms)[np.minimum(idx, len(self.atoms) - 1)]

    def rule(self, breakpoints=()):
        return np.asarray(self.atoms), np.asarray(self.probs)

    def expect(self, g, *, breakpoints=(), rtol=1e-9, max_nodes=2**14):
        nodes, w = self.rule()
        return np.asarray(g(nodes), dtype=float) @ w

    def expect_rows(self, g, row_breakpoints, *, rtol=1e-9, max_nodes=2**14):
        S = np.asarray(row_breakpoints).shape[0]
        nodes, w = self.rule()
        return np.asarray(g(np.broadcast_to(nodes, (S, nodes.size)), np.arange(S)), dtype=float) @ w

    def to_json(self):
        if len(self.atoms) == 1:
            return {"family": "point", "at": self.atoms[0]}
        return {"family": "discrete", "atoms": list(self.atoms), "probs": list(self.probs)}


def point(at: float) -> Discrete:
    return Discrete((at,), (1.0,))


def _row_edges(row_breakpoints, lo: float, hi: float) -> np.ndarray:
    """Sorted per-row edges [lo, bps..., hi]; unused or outside breakpoints collapse onto lo."""
    b = np.asarray(row_breakpoints, dtype=float)
    b = np.where(np.isfinite(b) & (b > lo) & (b < hi), b, lo)
    S = b.shape[0]
    e = np.concatenate([np.full((S, 1), lo), b, np.full((S, 1), hi)], axis=1)
    return np.sort(e, axis=1)


class _Continuous(SizeLaw):
    """Continuous law integrated against its density on an effective support."""

    def pdf(self, x):
        raise NotImplementedError

    def effective_support(self) -> tuple[float, float]:
        raise NotImplementedError

    def _edges(self, breakpoints):
        lo, hi = self.effective_support()
        return sorted({lo, hi, *[b for b in breakpoints if lo < b < hi]})

    def expect(self, g, *, breakpoints=(), rtol=1e-9, max_nodes=2**14):
        lo, hi = self.effective_support()
        return adaptive_gauss_legendre(
            lambda x: np.asarray(g(x), dtype=float) * self.pdf(x),
            lo, hi, breakpoints=breakpoints, rtol=rtol, max_nodes=max_nodes,
        )

    def expect_rows(self, g, row_breakpoints, *, rtol=1e-9, max_nodes=2**14):
        lo, hi = self.effective_support()
        return batched_adaptive(
            lambda z, rows: np.asarray(g(z, rows), dtype=float) * self.pdf(z),
            _row_edges(row_breakpoints, lo, hi), rtol=rtol, max_nodes=max_nodes,
        )

    def rule(self, breakpoints=(), panels_per_interval: int = 8):
        nodes, w = composite_rule(self._edges(breakpoints), panels_per_interval)
        return nodes, w * self.pdf(nodes)


@dataclass(frozen=True)
class Normal(_Continuous):
    mu: float = 0.0
    sd: float = 1.0
    name = "normal"

    def __post_init__(self):
        if not self.sd > 0:
            raise ValueError("normal sd must be positive")

    def pdf(self, x):
        z = (np.asarray(x) - self.mu) / self.sd
        return np.exp(-0.5 * z * z) / (self.sd * math.sqrt(2 * math.pi))

    def ppf(self, u):
        return self.mu + self.sd * special.ndtri(u)

    def effective_support(self):
        return self.mu - 14 * self.sd, self.mu + 14 * self.sd

    def to_json(self):
        return {"family": "normal", "mu": self.mu, "sd": self.sd}


@dataclass(frozen=True)
class Uniform(_Continuous):
    a: float = 0.0
    b: float = 1.0
    name = "uniform"

    def __post_init__(self):
        if not self.b > self.a:
            raise ValueError("uniform law needs b > a")

    def pdf(self, x):
        x = np.asarray(x)
        return np.where((x >= self.a) & (x <= self.b), 1.0 / (self.b - self.a), 0.0)

    def ppf(self, u):
        return self.a + (self.b - self.a) * np.asarray(u)

    def effective_support(self):
        return self.a, self.b

    def to_json(self):
        return {"family": "uniform", "a": self.a, "b": self.b}


@dataclass(frozen=True)
class Beta(_Continuous):
    a: float = 2.0
    b: float = 2.0
    name = "beta"

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError("beta parameters must be positive")

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x > 0) & (x < 1)
        xc = np.clip(x, 1e-300, 1 - 1e-16)
        logp = (self.a - 1) * np.log(xc) + (self.b - 1) * np.log1p(-xc) - special.betaln(self.a, self.b)
        return np.where(inside, np.exp(logp), 0.0)

    def ppf(self, u):
        return special.betaincinv(self.a, self.b, np.asarray(u))

    def effective_support(self):
        return 0.0, 1.0

    def to_json(self):
        return {"family": "beta", "a": self.a, "b": self.b}


@dataclass(frozen=True)
class Cauchy(SizeLaw):
    loc: float = 0.0
    scale: float = 1.0
    name = "cauchy"

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("cauchy scale must be positive")

    def cdf(self, x):
        return 0.5 + np.arctan((np.asarray(x) - self.loc) / self.scale) / math.pi

    def ppf(self, u):
        return self.loc + self.scale * np.tan(math.pi * (np.asarray(u) - 0.5))

    def expect(self, g, *, breakpoints=(), rtol=1e-9, max_nodes=2**14):
        # integrate in probability space to handle the heavy tails
        ub = [float(self.cdf(b)) for b in breakpoints]
        return adaptive_gauss_legendre(
            lambda u: np.asarray(g(self.ppf(u)), dtype=float), 0.0, 1.0,
            breakpoints=ub, rtol=rtol, max_nodes=max_nodes,
        )

    def expect_rows(self, g, row_breakpoints, *, rtol=1e-9, max_nodes=2**14):
        ub = self.cdf(np.asarray(row_breakpoints, dtype=float))
        return batched_adaptive(
            lambda u, rows: np.asarray(g(self.ppf(u), rows), dtype=float),
            _row_edges(ub, 0.0, 1.0), rtol=rtol, max_nodes=max_nodes,
        )

    def rule(self, breakpoints=(), panels_per_interval: int = 16):
        ub = [float(self.cdf(b)) for b in breakpoints]
        nodes, w = composite_rule(sorted({0.0, 1.0, *ub}), panels_per_interval)
        return self.ppf(nodes), w

    def to_json(self):
        return {"family": "cauchy", "loc": self.loc, "scale": self.scale}


FAMILIES = {
    "point": lambda o: point(o["at"]),
    "discrete": lambda o: Discrete(tuple(o["atoms"]), tuple(o["probs"])),
    "normal": lambda o: Normal(o.get("mu", 0.0), o.get("sd", 1.0)),
    "uniform": lambda o: Uniform(o.get("a", 0.0), o.get("b", 1.0)),
    "beta": lambda o: Beta(o["a"], o["b"]),
    "cauchy": lambda o: Cauchy(o.get("loc", 0.0), o.get("scale", 1.0)),
}


def law_from_json(obj: dict) -> SizeLaw:
    try:
        family = obj["family"]
    except (KeyError, TypeError):
        raise ValueError(f"size law needs a 'family' field, got {obj!r}") from None
    if family not in FAMILIES:
        raise ValueError(f"unknown size-law family {family!r}; choose from {sorted(FAMILIES)}")
    return FAMILIES[family](obj)


class JumpKernel:
    """Compensator kernel ``intensity(t, x) * law(dz) dt``.

    ``rate_bound`` is the dominating rate used for thinning; the simulators
    raise if the intensity ever exceeds it at a visited state.
    """

    def __init__(self, intensity, law: SizeLaw, rate_bound: float | None = None):
        self.intensity_text = intensity if isinstance(intensity, (str, int, float)) else None
        self.intensity = compile_coefficient(intensity)
        self.law = law
        if rate_bound is None:
            if self.intensity_text is None:
                raise ValueError("rate_bound required for callable intensities")
            probe = float(np.max(self.intensity(0.0, np.zeros(1))))
            if not getattr(self.intensity, "is_constant", False):
                raise ValueError("rate_bound required for non-constant intensities")
            rate_bound = probe
        self.rate_bound = float(rate_bound)
        if self.rate_bound < 0:
            raise ValueError("rate_bound must be nonnegative")

    @classmethod
    def none(cls) -> "JumpKernel":
        return cls(0.0, point(1.0), 0.0)

    @property
    def is_null(self) -> bool:
        return self.rate_bound == 0.0

    def to_json(self) -> dict:
        return {"intensity": self.intensity_text, "law": self.law.to_json(), "rate_bound": self.rate_bound}

    @classmethod
    def from_json(cls, obj: dict | None) -> "JumpKernel":
        if not obj:
            return cls.none()
        return cls(obj.get("intensity", 0.0), law_from_json(obj["law"]), obj.get("rate_bound"))
