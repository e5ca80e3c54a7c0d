import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dirichlet_lab.core import PathEnsemble, TimeGrid
from dirichlet_lab.mtgcheck import (
    CAVEAT, DomainError, OperatorPair, OperatorSpec, TestFunction, bm_generator, build_Mv,
    compensator_path, homogeneous_to_inhomogeneous, markov_operator, martingale_test, operator_from_json,
    zero_operator,
)
from dirichlet_lab.simulate import gen_bm

G = TimeGrid(1.0, 100)


def test_zero_operator_constant_v():
    ens = gen_bm(G, 150, 1)
    M = build_Mv(zero_operator(), "3.0", ens)
    assert np.all(M == 0.0)
    rep = martingale_test(M, ens)
    assert rep.verdict == "accept"
    assert np.all(rep.z_scores() == 0.0)
    assert len(rep.degenerate) == len(rep.rows)


def test_bm_square_mean_zero():
    ens = gen_bm(G, 10_000, 2)
    M = build_Mv(bm_generator(), "x^2", ens, x0=0.0)
    np.testing.assert_allclose(M, ens.values**2 - G.times[None, :], atol=1e-12)
    mt = M[:, -1]
    assert abs(mt.mean()) < 4 * mt.std() / math.sqrt(mt.size)


def test_single_path_returns_sample_path():
    ens = gen_bm(G, 1, 2)
    M = build_Mv(bm_generator(), "x", ens.path(0))
    np.testing.assert_allclose(M.values, ens.values[0])


def test_x0_mismatch_and_domain():
    ens = gen_bm(G, 3, 2, x0=1.0)
    with pytest.raises(ValueError, match="x0"):
        build_Mv(bm_generator(), "x", ens, x0=0.0)
    bare = TestFunction(lambda t, x: x)
    with pytest.raises(DomainError):
        build_Mv(bm_generator(), bare, ens)


def test_homogeneous_time_independent_reduces_to_L():
    L = markov_operator("sin(x)", "1 + x^2/4")
    op = homogeneous_to_inhomogeneous(L)
    v = TestFunction.from_expression("cos(x) + x^3")
    y = np.linspace(-2, 2, 41)
    s = np.full_like(y, 0.3)
    got = op.pairs[0].Lambda(s, y, v)
    want = L(v.at_time(s), s, y)
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-14)


def test_product_rule_identity():
    L = markov_operator("x", "2")
    op = homogeneous_to_inhomogeneous(L)
    v = TestFunction.from_expression("exp(-t)*sin(x)")
    f = TestFunction.from_expression("sin(x)")
    y = np.linspace(-3, 3, 61)
    for s0 in (0.0, 0.4, 1.0):
        s = np.full_like(y, s0)
        a, da = math.exp(-s0), -math.exp(-s0)
        want = da * np.sin(y) + a * L(f.at_time(s), s, y)
        np.testing.assert_allclose(op.pairs[0].Lambda(s, y, v), want, rtol=0, atol=1e-12)


def test_exp_t_square_under_half_laplacian():
    op = bm_generator()
    v = TestFunction.from_expression("exp(t)*x^2")
    y = np.linspace(-2, 2, 21)
    s = np.full_like(y, 0.7)
    np.testing.assert_allclose(op.pairs[0].Lambda(s, y, v), math.exp(0.7) * (y**2 + 1), rtol=1e-13)
    ens = gen_bm(G, 5000, 5)
    M = build_Mv(op, v, ens)[:, -1]
    assert abs(M.mean()) < 4 * M.std() / math.sqrt(M.size)


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_linearity(a, b):
    ens = gen_bm(G, 5, 3)
    op = bm_generator(0.7)
    v = TestFunction.from_expression("sin(x)*exp(t)")
    w = TestFunction.from_expression("x^3 - t")
    lhs = build_Mv(op, a * v + b * w, ens)
    rhs = a * build_Mv(op, v, ens) + b * build_Mv(op, w, ens)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_non_anticipation_tamper():
    ens = gen_bm(G, 4, 6)

    def Lam(s, eta, v):
        return eta.running_max + v(s, eta.current)

    op = OperatorSpec((OperatorPair(Lam, markovian=False),), (), "pathdep")
    rng = np.random.default_rng(0)
    base = compensator_path(op, "x", ens)
    for j in (10, 50, 90):
        vals = ens.values.copy()
        vals[:, j + 1:] = rng.permutation(vals[:, j + 1:], axis=1) + rng.standard_normal(vals[:, j + 1:].shape)
        tampered = PathEnsemble(G, vals, ens.seeds)
        # increments up to index j use only eta^{t_j}
        np.testing.assert_array_equal(compensator_path(op, "x", tampered)[:, : j + 1], base[:, : j + 1])


def test_wrong_drift_rejected():
    ens = gen_bm(G, 10_000, 8)
    drifted = PathEnsemble(G, ens.values + 0.5 * G.times[None, :], ens.seeds)
    M = build_Mv(bm_generator(), "x", drifted)
    assert martingale_test(M, drifted).verdict == "reject"


def test_true_generator_accepted():
    ens = gen_bm(G, 2000, 9)
    M = {v: build_Mv(bm_generator(), v, ens) for v in ("sin(x)", "tanh(x)*exp(t)")}
    rep = martingale_test(M, ens)
    assert rep.verdict == "accept"
    assert len(rep.rows) == 2 * 3 * 4


def test_bonferroni_critical_value():
    from scipy import stats

    ens = gen_bm(G, 200, 1)
    rep = martingale_test(build_Mv(bm_generator(), "sin(x)", ens), ens, alpha=0.05)
    m = len(rep.rows) - len(rep.degenerate)
    assert rep.z_crit == pytest.approx(stats.norm.ppf(1 - 0.05 / (2 * m)))


def test_report_csv_footer():
    ens = gen_bm(G, 200, 1)
    rep = martingale_test(build_Mv(bm_generator(), "sin(x)", ens), ens)
    buf = io.StringIO()
    rep.write(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "v_id,g_id,s,t,stat,se,z,reject"
    assert lines[-1] == f"# {CAVEAT}"


def test_min_paths_and_checkpoints():
    ens = gen_bm(G, 50, 1)
    with pytest.raises(ValueError, match="100"):
        martingale_test(np.zeros((50, 101)), ens)
    ens = gen_bm(G, 100, 1)
    with pytest.raises(ValueError):
        martingale_test(np.zeros((100, 101)), ens, checkpoints=[(0.5, 0.5)])


def test_operator_json_pairs_and_atoms():
    op = operator_from_json({"pairs": [{"measure": "lebesgue", "terms": {"t": 1, "xx": 0.5}},
                                       {"measure": "atoms", "atoms": [0.5], "terms": {"v": 1}}],
                             "domain": ["t", "xx"]})
    ens = gen_bm(G, 3, 2)
    A = compensator_path(op, "x^2", ens)
    # lebesgue part: int 1 ds; atom at 0.5 adds v(0.5, X_{0.5-})
    want = G.times[None, :] + np.where(G.times >= 0.5, ens.values[:, [50]] ** 2, 0.0)
    np.testing.assert_allclose(A, want, atol=1e-12)


def test_operator_json_errors():
    with pytest.raises(ValueError, match="kind"):
        operator_from_json({"kind": "levy"})
    with pytest.raises(ValueError, match="pairs"):
        operator_from_json({"pairs": []})
    with pytest.raises(ValueError, match="term"):
        operator_from_json({"pairs": [{"terms": {"y": 1}}]})
