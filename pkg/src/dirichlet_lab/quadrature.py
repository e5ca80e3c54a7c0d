"""Adaptive Gauss-Legendre quadrature for (vector-valued) integrands."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

MAX_NODES = 2**14


class QuadratureError(ArithmeticError):
    pass


@lru_cache(maxsize=32)
def _rule(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_legendre(f, a: float, b: float, order: int = 16):
    """Fixed-order rule on [a, b].  ``f`` maps a 1-D node array to (..., n_nodes)."""
    x, w = _rule(order)
    half = 0.5 * (b - a)
    nodes = 0.5 * (a + b) + half * x
    return np.asarray(f(nodes), dtype=float) @ (half * w)


def composite_rule(edges, panels_per_interval: int = 8, order: int = 16):
    """Nodes and weights of a composite Gauss-Legendre rule on sorted edges.

    The rule does not depend on any integrand, so integrals computed with it
    are exactly linear in the integrand.
    """
    x, w = _rule(order)
    nodes, weights = [], []
    edges = np.asarray(edges, dtype=float)
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi <= lo:
            continue
        cuts = np.linspace(lo, hi, panels_per_interval + 1)
        for a, b in zip(cuts[:-1], cuts[1:]):
            half = 0.5 * (b - a)
            nodes.append(0.5 * (a + b) + half * x)
            weights.append(half * w)
    return np.concatenate(nodes), np.concatenate(weights)


def adaptive_gauss_legendre(
    f,
    a: float,
    b: float,
    *,
    breakpoints=(),
    rtol: float = 1e-9,
    atol: float = 1e-13,
    order: int = 16,
    max_nodes: int = MAX_NODES,
):
    """Integrate ``f`` over [a, b] by panel bisection.

    ``f`` takes a 1-D array of nodes and returns an array whose last axis runs
    over the nodes (extra leading axes are integrated componentwise).  A panel
    is accepted when its one-level refinement changes the estimate by less
    than ``max(atol, rtol * |total|)`` scaled by the panel's share of [a, b].
    Raises :class:`QuadratureError` when more than ``max_nodes`` integrand
    evaluations would be needed.
    """
    if b < a:
        return -adaptive_gauss_legendre(
            f, b, a, breakpoints=breakpoints, rtol=rtol, atol=atol, order=order, max_nodes=max_nodes
        )
    edges = sorted({a, b, *[p for p in breakpoints if a < p < b]})
    if b == a:
        return np.asarray(f(np.array([a])), dtype=float)[..., 0] * 0.0
    stack = []
    used = 0
    for lo, hi in zip(edges[:-1], edges[1:]):
        stack.append((lo, hi, gauss_legendre(f, lo, hi, order)))
        used += order
    width = b - a
    accepted = []
    # rough scale of the answer for the relative criterion
    scale = np.abs(sum(s[2] for s in stack))
    while stack:
        lo, hi, coarse = stack.pop()
        mid = 0.5 * (lo + hi)
        left = gauss_legendre(f, lo, mid, order)
        right = gauss_legendre(f, mid, hi, order)
        used += 2 * order
        fine = left + right
        tol = np.maximum(atol, rtol * np.maximum(scale, np.abs(fine))) * max((hi - lo) / width, 1e-6)
        if np.all(np.abs(fine - coarse) <= tol) or hi - lo < 1e-12 * max(1.0, width):
            accepted.append(fine)
            continue
        if used > max_nodes:
            raise QuadratureError(
                f"adaptive Gauss-Legendre did not converge on [{a}, {b}] within {max_nodes} nodes "
                f"(change {np.max(np.abs(fine - coarse)):.3e} on panel [{lo:.6g}, {hi:.6g}])"
            )
        stack.append((lo, mid, left))
        stack.append((mid, hi, right))
    return sum(accepted)


def _batched_rule(edges: np.ndarray, panels: int, order: int):
    """Per-row composite rule.  ``edges`` is (S, E), rows sorted; repeated edges give empty intervals."""
    x, w = _rule(order)
    lo, hi = edges[:, :-1], edges[:, 1:]
    frac = np.arange(panels + 1) / panels
    cuts = lo[..., None] + (hi - lo)[..., None] * frac  # (S, E-1, panels+1)
    a, b = cuts[..., :-1], cuts[..., 1:]
    half = 0.5 * (b - a)
    nodes = (0.5 * (a + b))[..., None] + half[..., None] * x
    weights = half[..., None] * w
    S = edges.shape[0]
    return nodes.reshape(S, -1), weights.reshape(S, -1)


def batched_adaptive(
    f,
    edges,
    *,
    rtol: float = 1e-9,
    atol: float = 1e-13,
    order: int = 16,
    max_nodes: int = MAX_NODES,
    start_panels: int = 2,
):
    """Row-wise integrals over per-row edge lists, refined by panel doubling.

    ``f(nodes, rows)`` receives nodes of shape (R, M) for the row indices
    ``rows`` and returns values of the same shape.  A row is accepted when two
    successive levels agree to ``max(atol, rtol * |I|)``.  Raises
    :class:`QuadratureError` when a row would need more than ``max_nodes``
    nodes.
    """
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 2 or edges.shape[1] < 2:
        raise ValueError("edges must have shape (S, E) with E >= 2")
    S, E = edges.shape
    out = np.empty(S)
    todo = np.arange(S)
    panels = start_panels
    nodes, w = _batched_rule(edges, panels, order)
    prev = np.sum(np.asarray(f(nodes, todo), dtype=float) * w, axis=1)
    while todo.size:
        panels *= 2
        if (E - 1) * panels * order > max_nodes:
            raise QuadratureError(
                f"batched Gauss-Legendre did not converge within {max_nodes} nodes "
                f"for {todo.size} of {S} rows"
            )
        nodes, w = _batched_rule(edges[todo], panels, order)
        cur = np.sum(np.asarray(f(nodes, todo), dtype=float) * w, axis=1)
        ok = np.abs(cur - prev) <= np.maximum(atol, rtol * np.abs(cur))
        out[todo[ok]] = cur[ok]
        todo, prev = todo[~ok], cur[~ok]
    return out
