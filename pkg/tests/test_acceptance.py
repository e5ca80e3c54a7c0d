"""Acceptance criteria 1-11; each test prints one PASS/FAIL line.

Run alone with ``python3 -m pytest tests/test_acceptance.py -v -s``; the
lines are also repeated in the terminal summary.
"""

import math
import time

import numpy as np
import pytest
from scipy import stats

from dirichlet_lab import laws
from dirichlet_lab.brackets import jump_square_sum, ucp_bracket, ucp_bracket_values, weak_qv_diagnostic
from dirichlet_lab.characteristics import (
    CharTriplet, b_bar_via_cutoff, change_truncation, pushforward, pushforward_integral, transform_B_htransform,
    triplet_for_jump_diffusion,
)
from dirichlet_lab.core import PathEnsemble, SamplePath, TimeGrid, TruncationFn, constant_path, extract_jumps
from dirichlet_lab.decompose import chain_rule_check, gamma_k_residual
from dirichlet_lab.distdrift import DomainFunction, DriftSpec, apply_L, build_h, build_sigma
from dirichlet_lab.mtgcheck import bm_generator, build_Mv, martingale_test
from dirichlet_lab.pdmp import PdmpSpec, PointMassQ, UniformQ, pdmp_generator, simulate_pdmp
from dirichlet_lab.simulate import JumpDiffusionSpec, gen_bm, gen_compound_poisson, gen_convolution_example, \
    gen_jump_diffusion

RESULTS: list[str] = []


def report(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def test_c01_brownian_qv():
    g = TimeGrid(1.0, 10_000)
    start = time.perf_counter()
    ens = gen_bm(g, 400, 101)
    mean = float(np.mean(ucp_bracket_values(ens, ens, 10 * g.dt)))
    wall = time.perf_counter() - start
    report(1, 0.98 <= mean <= 1.02 and wall < 10, f"mean [W,W]_eps(1) = {mean:.4f} in [0.98, 1.02], {wall:.1f} s < 10 s")


def test_c02_convolution_qv():
    g = TimeGrid(1.0, 1000)
    start = time.perf_counter()
    ens = gen_convolution_example(g, 400, 102)
    mean = float(np.mean(ucp_bracket_values(ens, ens, g.dt)))
    wall = time.perf_counter() - start
    ok = abs(mean - 0.5) <= 0.025 and wall < 30
    report(2, ok, f"mean [X,X]_eps(1) = {mean:.4f} in 0.5 +- 5%, {wall:.1f} s < 30 s")


def test_c03_jump_split():
    g = TimeGrid(1.0, 1000)
    ens = gen_compound_poisson(g, 400, 103, 2.0, laws.Normal(0.0, 1.0))
    eps = 5 * g.dt
    br = ucp_bracket_values(ens, ens, eps)
    js = np.asarray(jump_square_sum(ens), dtype=float)
    frac = float(np.mean(np.abs(br - js) < 0.05 * js + 10 * eps))
    report(3, frac >= 0.95, f"fraction within 0.05 sum|dX|^2 + 10 eps = {frac:.3f} >= 0.95")


def test_c04_chain_rule():
    g = TimeGrid(1.0, 1000)
    spec = JumpDiffusionSpec(drift=0.0, diffusion=1.0, jumps=laws.JumpKernel(1.0, laws.Normal(0.0, 1.0)))
    ens = gen_jump_diffusion(spec, g, 10_000, 104)
    rep = chain_rule_check(ens, lambda t, x: np.sin(x) * np.exp(t), lambda t, x: np.cos(x) * np.exp(t),
                           [g.dt], c=10.0)
    worst = max(abs(r[1]) / r[2] for r in rep.rows)
    report(4, rep.verdict == "orthogonal-consistent",
           f"{rep.verdict} on {len(rep.rows)} dictionary statistics, max |D|/band = {worst:.2f}")


def test_c05_htransform_cross_method():
    g = TimeGrid(1.0, 1000)
    spec = JumpDiffusionSpec(drift=0.5, diffusion=0.4, x0=0.2, truncation=TruncationFn.indicator(0.5),
                             jumps=laws.JumpKernel(2.0, laws.Normal(0.0, 0.3)))
    X = gen_jump_diffusion(spec, g, 1, 105).path(0)
    tr = triplet_for_jump_diffusion(spec, X)
    h, dh, d2h = (lambda x: x**3 + x), (lambda x: 3 * x**2 + 1), (lambda x: 6 * x)
    direct = transform_B_htransform(tr, h, dh, d2h, X).B.values
    cut, _ = b_bar_via_cutoff(tr, h, dh, d2h, X)
    gap = float(np.max(np.abs(direct - cut)))
    tol = 10 * g.dt + 1e-6
    report(5, gap < tol, f"sup |B_direct - B_cutoff| = {gap:.2e} < {tol:.2e}")


def _partial_normal_mean(a, b, mu, sd):
    za, zb = (a - mu) / sd, (b - mu) / sd
    return mu * (stats.norm.cdf(zb) - stats.norm.cdf(za)) + sd * (stats.norm.pdf(za) - stats.norm.pdf(zb))


def test_c06_truncation_change():
    g = TimeGrid(1.0, 100)
    zero = constant_path(g)
    k1, k3 = TruncationFn.indicator(1.0), TruncationFn.indicator(3.0)
    errs = []
    lam = 1.7
    out = change_truncation(CharTriplet(zero, zero, laws.JumpKernel(lam, laws.point(2.0)), k1), k3)
    errs.append(np.max(np.abs(out.B.values - 2 * lam * g.times)))
    sym = laws.Discrete((-2.0, 2.0), (0.5, 0.5))
    out = change_truncation(CharTriplet(zero, zero, laws.JumpKernel(lam, sym), k1), k3)
    errs.append(np.max(np.abs(out.B.values)))
    mu, sd, lam = 0.4, 1.0, 2.0
    out = change_truncation(CharTriplet(zero, zero, laws.JumpKernel(lam, laws.Normal(mu, sd)), k1), k3)
    gain = _partial_normal_mean(1, 3, mu, sd) + _partial_normal_mean(-3, -1, mu, sd)
    errs.append(np.max(np.abs(out.B.values - lam * gain * g.times)))
    worst = float(max(errs))
    report(6, worst < 1e-9, f"max error over {len(errs)} closed forms = {worst:.1e} < 1e-9")


def test_c07_martingale_calibration_and_power():
    g = TimeGrid(1.0, 100)
    weights = {"1": lambda eta: np.ones(eta.values.shape[0]), "X_s": lambda eta: eta.current,
               "sin_X_s": lambda eta: np.sin(eta.current)}
    op = bm_generator()
    rejections = 0
    for r in range(200):
        ens = gen_bm(g, 400, 7000 + r)
        rep = martingale_test(build_Mv(op, "sin(x)", ens), ens, weights=weights, alpha=0.05)
        rejections += rep.verdict == "reject"
    size = rejections / 200
    g4 = TimeGrid(1.0, 1000)
    power_hits = 0
    n_power = 20
    for r in range(n_power):
        ens = gen_bm(g4, 10_000, 8000 + r)
        drifted = PathEnsemble(g4, ens.values + 0.5 * g4.times[None, :], ens.seeds)
        power_hits += martingale_test(build_Mv(op, "x", drifted), drifted).verdict == "reject"
    power = power_hits / n_power
    report(7, 0.01 <= size <= 0.10 and power > 0.95,
           f"rejection frequency {size:.3f} in [0.01, 0.10]; wrong-drift power {power:.2f} > 0.95")


def test_c08_pdmp():
    g = TimeGrid(1.0, 1000)
    c, n = 2.0, 10_000
    ens = simulate_pdmp(PdmpSpec("0", "2", 2.0, PointMassQ(0.5), 1.0), 0.3, g, n, 108)
    events = ens.truth("events")[:, -1].sum()
    mle = g.T * n / events
    se = (1 / c) / math.sqrt(events)
    mean_ok = abs(mle - (1 / c + g.dt / 2)) < 3 * se

    spec = PdmpSpec("2", "4*x*(1-x)", 1.0, UniformQ(), 1.0)
    # the grid bias of M^v is O(dt); 1000 steps keeps it below the 3000-path MC band
    gm = TimeGrid(1.0, 1000)
    X = simulate_pdmp(spec, 0.5, gm, 3000, 118)
    verdicts = {v: martingale_test(build_Mv(pdmp_generator(spec, v), v, X, 0.5), X, alpha=0.05).verdict
                for v in ("x", "x^2", "sin(pi*x)*exp(t)")}
    mtg_ok = all(v == "accept" for v in verdicts.values())

    lin = simulate_pdmp(PdmpSpec("1", "0", 0.0, PointMassQ(0.5), 1.0), 0.9, g, 1, 0)
    pstar = lin.truth("pstar")[0]
    # hits at 0.1, 0.6 (snapped to the grid); each is a jump, none other
    hits = np.nonzero(np.diff(pstar))[0] + 1
    jumps = np.nonzero(lin.jump_matrix()[0])[0]
    book_ok = (pstar[-1] == 2 and np.array_equal(hits, jumps)
               and np.all(np.abs(g.times[hits] - [0.1, 0.6]) <= 2 * g.dt + 1e-12))
    report(8, mean_ok and mtg_ok and book_ok,
           f"inter-jump mean {mle:.4f} vs {1 / c + g.dt / 2:.4f} +- 3se ({3 * se:.4f}); martingale {verdicts}; "
           f"p*(1) = {pstar[-1]:g}")


def test_c09_distdrift():
    spec = DriftSpec(beta="x", sigma="1", R=4.0)
    sig = build_sigma(spec)
    inner = np.abs(sig.x) <= 2.0
    s_err = float(np.max(np.abs(sig.values[inner] - 2 * sig.x[inner])))
    ht = build_h(sig)
    h0 = abs(float(ht.hprime(0.0)) - 1.0)
    f = DomainFunction(ht, lambda x: 1 + x**2, lambda x: 2 * x, 0.3)
    probe = np.linspace(-1, 1, 41)
    gap = float(np.max(np.abs(apply_L(ht, "1", f.square())(probe) - 2 * f(probe) * apply_L(ht, "1", f)(probe)
                              - f.derivative(probe) ** 2)))
    md = float(np.max(np.abs(build_sigma(spec, mollifier="bump").values - sig.values)))
    ok = s_err < 1e-3 and h0 <= 1e-12 and gap < 1e-10 and md < 3 * spec.tol
    report(9, ok, f"Sigma err {s_err:.1e} < 1e-3; |h'(0)-1| = {h0:.1e}; chain gap {gap:.1e} < 1e-10; "
                  f"mollifier gap {md:.1e} < {3 * spec.tol:.0e}")


def test_c10_weak_qv():
    g = TimeGrid(1.0, 2000)
    eps = [m * g.dt for m in (1, 2, 5, 10, 20, 50)]
    bm = weak_qv_diagnostic(gen_bm(g, 200, 110), eps).verdict
    conv = weak_qv_diagnostic(gen_convolution_example(g, 200, 111), eps).verdict
    osc = weak_qv_diagnostic(SamplePath(g, 0.5 * (-1.0) ** np.arange(g.n_steps + 1)), eps).verdict
    ok = bm == "tight-consistent" and conv == "tight-consistent" and osc == "not tight-consistent"
    report(10, ok, f"BM {bm}; convolution {conv}; oscillation {osc}")


def test_c11_invariants():
    rng = np.random.default_rng(111)
    g = TimeGrid(1.0, 200)
    fails = []
    for _ in range(20):
        x, y, z = rng.normal(size=(3, g.n_steps + 1)).cumsum(axis=1)
        a, b = rng.uniform(-3, 3, 2)
        eps = int(rng.integers(1, 20)) * g.dt
        X, Y, Z = (SamplePath(g, v) for v in (x, y, z))
        lhs = ucp_bracket(SamplePath(g, a * x + b * y), Z, eps)
        rhs = a * ucp_bracket(X, Z, eps) + b * ucp_bracket(Y, Z, eps)
        if abs(lhs - rhs) > 1e-10 * (1 + abs(rhs)):
            fails.append("bilinearity")
        pol = 0.25 * (ucp_bracket(SamplePath(g, x + y), SamplePath(g, x + y), eps)
                      - ucp_bracket(SamplePath(g, x - y), SamplePath(g, x - y), eps))
        if abs(ucp_bracket(X, Y, eps) - pol) > 1e-10 * (1 + ucp_bracket(X, X, eps) + ucp_bracket(Y, Y, eps)):
            fails.append("polarization")
        if ucp_bracket(X, Y, eps) ** 2 > ucp_bracket(X, X, eps) * ucp_bracket(Y, Y, eps) * (1 + 1e-12):
            fails.append("cauchy-schwarz")

    law = laws.point(1.0)
    spec = JumpDiffusionSpec(diffusion=1.0, jumps=laws.JumpKernel(1.0, law))
    ens = gen_jump_diffusion(spec, g, 30, 112)
    k = TruncationFn.ramp(0.5, 1.5)
    v, dv = (lambda t, x: np.sin(x) * np.exp(t)), (lambda t, x: np.cos(x) * np.exp(t))
    w, dw = (lambda t, x: x**3), (lambda t, x: 3 * x**2)
    lhs = gamma_k_residual(ens, lambda t, x: 2 * v(t, x) - w(t, x), lambda t, x: 2 * dv(t, x) - dw(t, x), k, law)
    rhs = 2 * gamma_k_residual(ens, v, dv, k, law).values - gamma_k_residual(ens, w, dw, k, law).values
    if np.max(np.abs(lhs.values - rhs)) > 1e-12 * (1 + np.max(np.abs(rhs))):
        fails.append("gamma linearity")

    zero = constant_path(g)
    tr = CharTriplet(zero, zero, laws.JumpKernel(2.0, laws.Normal(0.3, 1.2)), TruncationFn.indicator(1.0))
    k1, k2 = TruncationFn.indicator(0.5), TruncationFn.ramp(1.0, 2.0)
    via = change_truncation(change_truncation(tr, k2), k1).B.values
    if np.max(np.abs(via - change_truncation(tr, k1).B.values)) > 1e-10:
        fails.append("telescoping")

    jspec = JumpDiffusionSpec(drift=0.5, diffusion=0.4, x0=0.2, truncation=TruncationFn.indicator(0.5),
                              jumps=laws.JumpKernel(2.0, laws.Normal(0.0, 0.3)))
    P = gen_jump_diffusion(jspec, g, 1, 113).path(0)
    mu = extract_jumps(P)
    pf = pushforward(mu, lambda t, x: x, P)
    ulp = 4 * np.spacing(np.max(np.abs(P.values)))
    if not np.array_equal(pf.times, mu.times) or np.max(np.abs(np.asarray(pf.sizes) - mu.sizes)) > ulp:
        fails.append("pushforward identity")
    ptr = triplet_for_jump_diffusion(jspec, P)
    a = pushforward_integral(ptr, lambda x: x, lambda y: y**2, P)
    if np.max(np.abs(a - 2 * 0.09 * g.times)) > 1e-9 * 0.18 + 1e-12:
        fails.append("pushforward integral")
    report(11, not fails, "all invariants hold" if not fails else f"failed: {sorted(set(fails))}")
