import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dirichlet_lab import laws
from dirichlet_lab.characteristics import (
    AtomKernel, CharTriplet, CutoffIdentity, b_bar_via_cutoff, change_truncation, ito_compensator,
    pushforward, pushforward_integral, transform_B_htransform, transform_C, triplet_for_jump_diffusion,
    triplet_from_json,
)
from dirichlet_lab.core import JumpMeasure, SamplePath, TimeGrid, TruncationFn, constant_path, extract_jumps
from dirichlet_lab.simulate import JumpDiffusionSpec, gen_jump_diffusion

G = TimeGrid(1.0, 100)


def cp_triplet(rate, law, k):
    zero = constant_path(G)
    return CharTriplet(zero, zero, laws.JumpKernel(rate, law), k)


def jd_path(n_steps=200, seed=3):
    spec = JumpDiffusionSpec(
        drift=0.5, diffusion=0.4, x0=0.2, truncation=TruncationFn.indicator(0.5),
        jumps=laws.JumpKernel(2.0, laws.Normal(0.0, 0.3)),
    )
    X = gen_jump_diffusion(spec, TimeGrid(1.0, n_steps), 1, seed).path(0)
    return spec, X


# --------------------------------------------------------------------------
# truncation change


def test_change_truncation_identity():
    tr = cp_triplet(3.0, laws.Normal(0, 1), TruncationFn.indicator(1.0))
    assert change_truncation(tr, tr.k) is tr


def test_change_truncation_symmetric_sizes_zero():
    tr = cp_triplet(1.7, laws.Discrete((-2.0, 2.0), (0.5, 0.5)), TruncationFn.indicator(1.0))
    out = change_truncation(tr, TruncationFn.indicator(3.0))
    np.testing.assert_allclose(out.B.values, 0.0, atol=1e-9)


def test_change_truncation_positive_sizes():
    lam = 1.7
    tr = cp_triplet(lam, laws.point(2.0), TruncationFn.indicator(1.0))
    out = change_truncation(tr, TruncationFn.indicator(3.0))
    np.testing.assert_allclose(out.B.values, 2 * lam * G.times, rtol=0, atol=1e-9)
    assert out.C is tr.C and out.nu is tr.nu


def test_change_truncation_normal_closed_form():
    # E[J 1{1 < |J| <= 3}] = 0 for centred normal; shifted mean gives a closed form
    from scipy import stats

    mu, sd, lam = 0.4, 1.0, 2.0
    law = laws.Normal(mu, sd)
    tr = cp_triplet(lam, law, TruncationFn.indicator(1.0))
    out = change_truncation(tr, TruncationFn.indicator(3.0))

    def partial_mean(a, b):
        # int_a^b x phi((x - mu)/sd)/sd dx
        za, zb = (a - mu) / sd, (b - mu) / sd
        return mu * (stats.norm.cdf(zb) - stats.norm.cdf(za)) + sd * (stats.norm.pdf(za) - stats.norm.pdf(zb))

    gain = partial_mean(1, 3) + partial_mean(-3, -1)
    np.testing.assert_allclose(out.B.values, lam * gain * G.times, rtol=0, atol=1e-9)


@pytest.mark.parametrize("k1, k2", [
    (TruncationFn.indicator(0.5), TruncationFn.ramp(1.0, 2.0)),
    (TruncationFn.clip(1.0), TruncationFn.indicator(2.0)),
])
def test_change_truncation_telescopes(k1, k2):
    tr = cp_triplet(2.0, laws.Normal(0.3, 1.2), TruncationFn.indicator(1.0))
    via = change_truncation(change_truncation(tr, k2), k1)
    direct = change_truncation(tr, k1)
    np.testing.assert_allclose(via.B.values, direct.B.values, rtol=0, atol=1e-10)


def test_change_truncation_atom_kernel():
    zero = constant_path(G)
    tr = CharTriplet(zero, zero, AtomKernel(((0.5, 2.0, 1.0),)), TruncationFn.indicator(1.0))
    out = change_truncation(tr, TruncationFn.indicator(3.0))
    assert out.B.values[G.index(0.49)] == 0.0
    assert out.B.values[-1] == pytest.approx(2.0)


def test_triplet_invariants():
    zero = constant_path(G)
    with pytest.raises(ValueError):
        CharTriplet(SamplePath(G, np.ones(101)), zero, laws.JumpKernel.none(), TruncationFn.indicator())
    with pytest.raises(ValueError):
        CharTriplet(zero, SamplePath(G, -G.times), laws.JumpKernel.none(), TruncationFn.indicator())
    with pytest.raises(ValueError):
        AtomKernel(((0.1, 1.0, -1.0),))


# --------------------------------------------------------------------------
# pushforward


def test_pushforward_identity_and_scaling():
    _, X = jd_path()
    mu = extract_jumps(X)
    same = pushforward(mu, lambda t, x: x, X)
    np.testing.assert_array_equal(same.times, mu.times)
    np.testing.assert_allclose(same.sizes, mu.sizes, rtol=0, atol=4 * np.spacing(np.max(np.abs(X.values))))
    doubled = pushforward(mu, lambda t, x: 2 * x, X)
    np.testing.assert_allclose(doubled.sizes, 2 * mu.sizes, rtol=1e-12)


def test_pushforward_square():
    g = TimeGrid(1.0, 10)
    vals = np.ones(11)
    vals[4:] = 2.0
    X = SamplePath(g, vals, [(4, 1.0)])
    assert pushforward(X, lambda t, x: x**2, X).atoms == ((0.4, 3.0),)


def test_pushforward_drops_zeros():
    g = TimeGrid(1.0, 10)
    vals = np.ones(11)
    vals[4:] = -1.0
    X = SamplePath(g, vals, [(4, -2.0)])
    assert len(pushforward(X, lambda t, x: x**2, X)) == 0


def test_pushforward_lipschitz_mass():
    _, X = jd_path()
    mu = extract_jumps(X)
    out = pushforward(mu, lambda t, x: np.sin(x), X)
    assert np.sum(out.sizes**2) <= np.sum(mu.sizes**2) + 1e-15


def test_pushforward_integral_identity_map():
    spec, X = jd_path()
    tr = triplet_for_jump_diffusion(spec, X)
    a = pushforward_integral(tr, lambda x: x, lambda y: y**2, X)
    # lambda E[J^2] t = 2 * 0.09 t
    np.testing.assert_allclose(a, 2 * 0.09 * X.grid.times, rtol=1e-9, atol=1e-12)


# --------------------------------------------------------------------------
# Ito compensator


def bm_triplet(g):
    return CharTriplet(constant_path(g), SamplePath(g, g.times.copy()), laws.JumpKernel.none(),
                       TruncationFn.indicator())


def test_ito_compensator_constant():
    spec, X = jd_path()
    tr = triplet_for_jump_diffusion(spec, X)
    one = lambda x: np.ones_like(x)
    zero = lambda x: np.zeros_like(x)
    P = ito_compensator(tr, one, zero, zero, X)
    np.testing.assert_array_equal(P.values, 0.0)


def test_ito_compensator_bm_square():
    g = TimeGrid(1.0, 100)
    X = SamplePath(g, np.zeros(101))
    P = ito_compensator(bm_triplet(g), lambda x: x**2, lambda x: 2 * x, lambda x: 2 + 0 * x, X)
    np.testing.assert_allclose(P.values, g.times, atol=1e-14)


def test_ito_compensator_identity_small_jumps():
    # jumps inside the identity radius: f(x + z) - f(x) - k(z) f'(x) = 0 and only B remains
    zero = constant_path(G)
    B = SamplePath(G, 0.3 * G.times)
    tr = CharTriplet(B, zero, laws.JumpKernel(4.0, laws.Uniform(-0.5, 0.5)), TruncationFn.indicator(1.0))
    X = SamplePath(G, np.linspace(-1, 1, 101))
    P = ito_compensator(tr, lambda x: x, lambda x: np.ones_like(x), lambda x: np.zeros_like(x), X)
    np.testing.assert_allclose(P.values, B.values, atol=1e-14)


# --------------------------------------------------------------------------
# h-transform


def test_htransform_identity():
    spec, X = jd_path()
    tr = triplet_for_jump_diffusion(spec, X)
    out = transform_B_htransform(tr, lambda x: x, lambda x: np.ones_like(x), lambda x: np.zeros_like(x), X)
    np.testing.assert_allclose(out.B.values, tr.B.values, atol=1e-12)
    np.testing.assert_allclose(out.C.values, tr.C.values, atol=1e-15)


def test_htransform_doubling_small_atoms():
    g = TimeGrid(1.0, 10)
    zero = constant_path(g)
    tr = CharTriplet(zero, zero, AtomKernel(((0.35, 0.4, 1.0), (0.75, 0.4, 2.0))), TruncationFn.indicator(1.0))
    X = SamplePath(g, np.zeros(11))
    out = transform_B_htransform(tr, lambda x: 2 * x, lambda x: 2 + 0 * x, lambda x: 0 * x, X)
    np.testing.assert_allclose(out.B.values, 0.0, atol=1e-15)


def test_htransform_doubling_large_atom():
    # atom 0.7: k(0.7) * 2 - k(1.4) = 1.4 - 0
    g = TimeGrid(1.0, 10)
    zero = constant_path(g)
    tr = CharTriplet(zero, zero, AtomKernel(((0.35, 0.7, 1.0),)), TruncationFn.indicator(1.0))
    X = SamplePath(g, np.zeros(11))
    out = transform_B_htransform(tr, lambda x: 2 * x, lambda x: 2 + 0 * x, lambda x: 0 * x, X)
    assert out.B.values[-1] == pytest.approx(-1.4)


def test_htransform_rejects_non_bijection():
    spec, X = jd_path()
    tr = triplet_for_jump_diffusion(spec, X)
    with pytest.raises(ValueError, match="bijective"):
        transform_B_htransform(tr, lambda x: x**2, lambda x: 2 * x, lambda x: 2 + 0 * x,
                               SamplePath(X.grid, X.values - X.values.mean(), X.jumps))


def test_c_bar_monotone():
    spec, X = jd_path()
    tr = triplet_for_jump_diffusion(spec, X)
    C = transform_C(tr, lambda x: 3 * x**2 + 1, X)
    assert C[0] == 0 and np.all(np.diff(C) >= 0)


def test_cross_method_htransform():
    spec, X = jd_path(200, 7)
    tr = triplet_for_jump_diffusion(spec, X)
    h = lambda x: x**3 + x
    dh = lambda x: 3 * x**2 + 1
    d2h = lambda x: 6 * x
    direct = transform_B_htransform(tr, h, dh, d2h, X).B.values
    cut, dist = b_bar_via_cutoff(tr, h, dh, d2h, X)
    assert dist < 1e-9
    assert np.max(np.abs(direct - cut)) < 10 * X.grid.dt + 1e-6


@settings(max_examples=50, deadline=None)
@given(st.floats(-50, 50), st.sampled_from([1.0, 3.0, 10.0]))
def test_cutoff_identity(x, N):
    f = CutoffIdentity(N)
    xa = np.array([x])
    if abs(x) <= N:
        assert f(xa)[0] == pytest.approx(x, abs=1e-15)
    assert abs(f(xa)[0]) <= N + 1
    assert 0 <= f.d1(xa)[0] <= 1


def test_cutoff_derivative_consistent():
    f = CutoffIdentity(2.0)
    x = np.linspace(-5, 5, 2001)
    num = np.gradient(f(x), x)
    np.testing.assert_allclose(num[1:-1], f.d1(x)[1:-1], atol=1e-3)


def test_triplet_from_json():
    obj = {"B": "2*t", "C": "t", "nu": {"intensity": 1.0, "density": {"family": "point", "at": 2.0}},
           "k": {"identity_radius": 1.0}}
    tr = triplet_from_json(obj, G)
    np.testing.assert_allclose(tr.B.values, 2 * G.times)
    out = change_truncation(tr, TruncationFn.indicator(3.0))
    np.testing.assert_allclose(out.B.values, 4 * G.times, atol=1e-9)
