import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dirichlet_lab import laws
from dirichlet_lab.characteristics import change_truncation, triplet_for_jump_diffusion
from dirichlet_lab.core import PathEnsemble, TimeGrid, TruncationFn
from dirichlet_lab.decompose import (
    CONSISTENT, INCONCLUSIVE, INCONSISTENT, DecompReport, chain_rule_check, classify, combine, gamma_k_residual,
    gamma_report, hill_index, orthogonality_test, special_wd_check, stochastic_integral, test_martingales,
)
from dirichlet_lab.simulate import JumpDiffusionSpec, gen_bm, gen_compound_poisson, gen_jump_diffusion

G = TimeGrid(1.0, 1000)
EPS = [5 * G.dt, 10 * G.dt]


def test_classify_three_valued():
    assert classify(0.5, 1.0) == CONSISTENT
    assert classify(-1.5, 1.0) == INCONCLUSIVE
    assert classify(2.5, 1.0) == INCONSISTENT
    assert combine([CONSISTENT, CONSISTENT]) == CONSISTENT
    assert combine([CONSISTENT, INCONCLUSIVE]) == INCONCLUSIVE
    assert combine([INCONCLUSIVE, INCONSISTENT]) == INCONSISTENT


def test_report_csv_and_labels():
    rep = DecompReport("orthogonal", notes=["n1"])
    rep.add("a", 0.1, 1.0, CONSISTENT)
    assert rep.verdict == "orthogonal-consistent"
    text = rep.to_csv().splitlines()
    assert text[0] == "statistic,value,band,verdict"
    assert text[-2].endswith("orthogonal-consistent") and text[-1].startswith("# n1")
    rep.add("b", 5.0, 1.0, INCONSISTENT)
    assert rep.verdict == "not orthogonal-consistent"
    assert rep.row("b")[1] == 5.0


def test_stochastic_integral_left_point():
    W = np.array([[0.0, 1.0, 3.0, 2.0]])
    H = np.array([[2.0, 1.0, -1.0, 7.0]])
    np.testing.assert_allclose(stochastic_integral(H, W), [[0.0, 2.0, 4.0, 5.0]])


def test_orthogonality_zero_process():
    bm = gen_bm(G, 200, 1)
    zero = PathEnsemble(G, np.zeros((200, G.n_steps + 1)), bm.seeds)
    rep = orthogonality_test(zero, test_martingales(bm), EPS)
    assert all(r[1] == 0.0 for r in rep.rows)
    assert rep.verdict == "orthogonal-consistent"


def test_orthogonality_independent_jumps():
    cp = gen_compound_poisson(G, 400, 2, 3.0, laws.Normal(0.0, 1.0))
    bm = gen_bm(G, 400, 3)
    rep = orthogonality_test(cp, test_martingales(bm), EPS)
    assert rep.verdict == "orthogonal-consistent"


def test_orthogonality_bm_with_itself_fails():
    bm = gen_bm(G, 400, 4)
    rep = orthogonality_test(bm, {"W": bm.values}, EPS)
    assert rep.verdict == "not orthogonal-consistent"
    assert rep.rows[0][1] == pytest.approx(1.0, abs=0.15)


def test_orthogonality_empty_dictionary():
    with pytest.raises(ValueError, match="empty"):
        orthogonality_test(gen_bm(G, 2, 1), {}, EPS)


def _jd(n=2000, seed=5, drift=0.0, rate=1.0):
    spec = JumpDiffusionSpec(drift=drift, diffusion=1.0, jumps=laws.JumpKernel(rate, laws.point(1.0)))
    return spec, gen_jump_diffusion(spec, G, n, seed)


def test_chain_rule_identity_v():
    _, X = _jd()
    rep = chain_rule_check(X, lambda t, x: x, lambda t, x: np.ones_like(x), EPS, c=10.0)
    assert rep.verdict == "orthogonal-consistent"


def test_chain_rule_constant_v():
    _, X = _jd(200)
    rep = chain_rule_check(X, lambda t, x: 0 * x + 2.0, lambda t, x: 0 * x, EPS)
    assert all(r[1] == 0.0 for r in rep.rows)


def test_chain_rule_square_on_bm():
    X = gen_bm(G, 2000, 6)
    rep = chain_rule_check(X, lambda t, x: x**2, lambda t, x: 2 * x, EPS, c=10.0)
    assert rep.verdict == "orthogonal-consistent"


def test_chain_rule_wrong_derivative_detected():
    X = gen_bm(G, 2000, 6)
    rep = chain_rule_check(X, lambda t, x: x**2 + x, lambda t, x: 2 * x, EPS, c=1.0)
    assert rep.verdict == "not orthogonal-consistent"


def test_chain_rule_needs_ground_truth():
    X = gen_bm(G, 5, 1)
    bare = PathEnsemble(G, X.values, X.seeds)
    with pytest.raises(ValueError, match="ground truth"):
        chain_rule_check(bare, lambda t, x: x, lambda t, x: 1 + 0 * x, EPS)


# --------------------------------------------------------------------------
# special weak Dirichlet


def test_hill_index_pareto():
    rng = np.random.default_rng(0)
    a, se = hill_index(rng.pareto(1.0, 20_000) + 1.0)
    assert abs(a - 1.0) < 4 * se
    assert math.isnan(hill_index(np.ones(5))[0])


def test_special_wd_bounded_v():
    cp = gen_compound_poisson(G, 4000, 7, 2.0, laws.Cauchy(0.0, 1.0))
    rep = special_wd_check(cp, lambda t, x: np.tanh(x), 1.0)
    assert rep.verdict == "integrable-consistent"


def test_special_wd_no_big_jumps():
    cp = gen_compound_poisson(G, 500, 7, 2.0, laws.Uniform(-0.5, 0.5))
    rep = special_wd_check(cp, lambda t, x: x, 1.0)
    assert rep.row("mean")[1] == 0.0
    assert rep.verdict == "integrable-consistent"


def test_special_wd_bounded_jumps_identity():
    cp = gen_compound_poisson(G, 4000, 8, 2.0, laws.Uniform(-3.0, 3.0))
    assert special_wd_check(cp, lambda t, x: x, 1.0).verdict == "integrable-consistent"


def test_special_wd_cauchy_identity():
    cp = gen_compound_poisson(G, 4000, 9, 2.0, laws.Cauchy(0.0, 1.0))
    rep = special_wd_check(cp, lambda t, x: x, 1.0)
    assert rep.verdict == "not integrable-consistent"


def test_special_wd_errors():
    cp = gen_compound_poisson(G, 10, 9, 2.0)
    with pytest.raises(ValueError):
        special_wd_check(cp, lambda t, x: x, 0.0)


# --------------------------------------------------------------------------
# Gamma^k


def test_gamma_bm_zero():
    X = gen_bm(G, 400, 10)
    Gam = gamma_k_residual(X, lambda t, x: x, lambda t, x: 1 + 0 * x, TruncationFn.indicator())
    assert np.max(np.abs(Gam.values)) < 1e-12
    assert gamma_report(Gam).verdict == "gamma-consistent"


def test_gamma_drift_is_t():
    spec = JumpDiffusionSpec(drift=1.0, diffusion=1.0)
    X = gen_jump_diffusion(spec, G, 400, 11)
    Gam = gamma_k_residual(X, lambda t, x: x, lambda t, x: 1 + 0 * x, TruncationFn.indicator())
    np.testing.assert_allclose(Gam.values, np.broadcast_to(G.times, Gam.values.shape), atol=1e-10)
    assert gamma_report(Gam, expected=lambda t: t).verdict == "gamma-consistent"


def test_gamma_unit_poisson():
    # v = Id, k = x 1{|x| <= 1}: Gamma^k = t E[k(J)] = t k(1) = t (the B^k characteristic)
    X = gen_compound_poisson(G, 400, 12, 1.0, laws.point(1.0))
    Gam = gamma_k_residual(X, lambda t, x: x, lambda t, x: 1 + 0 * x, TruncationFn.indicator(1.0), laws.point(1.0))
    np.testing.assert_allclose(Gam.values, np.broadcast_to(G.times, Gam.values.shape), atol=1e-10)
    # with k = x 1{|x| <= 1/2} the unit jumps are all big and Gamma vanishes
    Gam2 = gamma_k_residual(X, lambda t, x: x, lambda t, x: 1 + 0 * x, TruncationFn.indicator(0.5), laws.point(1.0))
    assert np.max(np.abs(Gam2.values)) < 1e-12


def test_gamma_nonlinear_v_is_predictable_drift():
    # v = x^2 on BM: Gamma = int 1 ds = t, mean check
    X = gen_bm(G, 2000, 13)
    Gam = gamma_k_residual(X, lambda t, x: x**2, lambda t, x: 2 * x, TruncationFn.indicator())
    assert gamma_report(Gam, expected=lambda t: t, c=10.0).verdict == "gamma-consistent"


@settings(max_examples=10, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2))
def test_gamma_linear_in_v(a, b):
    spec, X = _jd(30, 14)
    law = laws.point(1.0)
    k = TruncationFn.ramp(0.5, 1.5)
    v = lambda t, x: np.sin(x) * np.exp(t)
    dv = lambda t, x: np.cos(x) * np.exp(t)
    w = lambda t, x: x**3
    dw = lambda t, x: 3 * x**2
    lhs = gamma_k_residual(X, lambda t, x: a * v(t, x) + b * w(t, x), lambda t, x: a * dv(t, x) + b * dw(t, x), k, law)
    rhs = a * gamma_k_residual(X, v, dv, k, law).values + b * gamma_k_residual(X, w, dw, k, law).values
    scale = 1 + np.max(np.abs(rhs))
    np.testing.assert_allclose(lhs.values, rhs, rtol=0, atol=1e-12 * scale)


def test_gamma_truncation_consistency():
    law = laws.Normal(0.2, 1.0)
    k1, k2 = TruncationFn.indicator(0.5), TruncationFn.ramp(1.0, 2.0)
    spec = JumpDiffusionSpec(diffusion=1.0, jumps=laws.JumpKernel(2.0, law), truncation=k2)
    X = gen_jump_diffusion(spec, G, 3, 15)
    idv = lambda t, x: x
    one = lambda t, x: 1 + 0 * x
    diff = gamma_k_residual(X, idv, one, k1, law).values - gamma_k_residual(X, idv, one, k2, law).values
    for i in range(3):
        tr = triplet_for_jump_diffusion(spec, X.path(i))
        dB = change_truncation(tr, k1, X.path(i)).B.values - tr.B.values
        np.testing.assert_allclose(diff[i], dB, rtol=0, atol=1e-8)


def test_gamma_needs_law_and_compensator():
    X = gen_compound_poisson(G, 3, 1, 1.0)
    with pytest.raises(ValueError, match="law"):
        gamma_k_residual(X, lambda t, x: x, lambda t, x: 1 + 0 * x, TruncationFn.indicator())
    bare = PathEnsemble(G, X.values, X.seeds, X.jump_path, X.jump_index, X.jump_size, {"Xc": X.truth("Xc")})
    with pytest.raises(ValueError, match="compensator"):
        gamma_k_residual(bare, lambda t, x: x, lambda t, x: 1 + 0 * x, TruncationFn.indicator(), laws.point(1.0))
