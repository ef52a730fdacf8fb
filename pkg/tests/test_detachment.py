import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from relaxkit.convexify import envelope
from relaxkit.core import BoxDomain, Lagrangian, SampledSlice, make_grid, sample_slice
from relaxkit.detachment import (
    KSearch,
    check_boundary_equality,
    check_condition_K,
    construct_phi,
    convexifying_correction,
    detachment_set,
    hessian_eigs,
    hessian_min_eig,
    quintic_gamma,
    superlinearity_certificate,
    theta_profile,
)
from relaxkit.gallery import builtin


def _slice(name, lo, hi, n, **kw):
    e = builtin(name, **kw)
    dim = e.lagrangian.xi_dim
    g = make_grid(BoxDomain([lo] * dim, [hi] * dim), [n] * dim)
    s = sample_slice(e.lagrangian, g)
    return s, envelope(s)


def test_double_well_detaches_on_the_open_interval():
    s, env = _slice("double_well", -2, 2, 81)
    rep = detachment_set(s, env)
    assert len(rep.components) == 1
    x = s.grid.nodes()[list(rep.components[0].nodes), 0]
    assert x.min() == pytest.approx(-0.95) and x.max() == pytest.approx(0.95)
    assert rep.max_diameter == pytest.approx(1.9)
    assert not rep.unbounded


def test_shifted_wells_detach_on_the_axis():
    s, env = _slice("shifted_wells", -3, 3, 61)
    rep = detachment_set(s, env)
    axis = np.flatnonzero(np.isclose(s.grid.nodes()[:, 0], 0.0))
    assert rep.mask[axis].all()


def test_sentinel_node_under_finite_envelope_is_detached():
    g = make_grid(BoxDomain([0], [2]), [3])
    s = SampledSlice(g, [0.0, np.inf, 0.0])
    rep = detachment_set(s, envelope(s))
    assert rep.mask.tolist() == [False, True, False]


def test_detachment_rejects_mismatched_grids():
    s, env = _slice("double_well", -2, 2, 81)
    other = SampledSlice(make_grid(BoxDomain([-2], [2]), [41]), np.ones(41))
    with pytest.raises(ValueError, match="different grids"):
        detachment_set(other, env)


def test_boundary_equality_one_plus_cos():
    s, env = _slice("one_plus_cos", -4 * np.pi, 4 * np.pi, 257)
    assert check_boundary_equality(s, env, math.pi, tol=1e-12)
    assert not check_boundary_equality(s, env, math.pi / 2, tol=1e-12)


def test_condition_K_double_well_all_routes():
    f = builtin("double_well").lagrangian
    for route in ("components", "boundary", "superlinear"):
        v = check_condition_K(f, (-1, 1), 5.0, KSearch(route=route, K_max=20))
        assert v.holds == "yes", route
        assert v.K_prime >= 5.0
        assert v.max_discrepancy <= 1e-9


def test_condition_K_exp_decay_never_validates():
    f = builtin("exp_decay").lagrangian
    v = check_condition_K(f, None, 1.0, KSearch(route="all", K_max=50, tol=1e-12))
    assert v.holds != "yes"


def test_condition_K_rejects_unknown_route_and_small_budget():
    f = builtin("double_well").lagrangian
    with pytest.raises(ValueError):
        check_condition_K(f, None, 1.0, KSearch(route="nope"))
    with pytest.raises(ValueError):
        check_condition_K(f, None, 10.0, KSearch(K_max=5))


def test_superlinearity_certificate():
    s, _ = _slice("double_well", -10, 10, 401)
    cert = superlinearity_certificate([s], [1, 5, 10])
    assert cert["certified"]
    assert cert["radius"] == sorted(cert["radius"])
    # at each certified radius and beyond, f >= s|xi| + s on the grid
    r = np.abs(s.grid.nodes()[:, 0])
    for sl, R in zip(cert["slopes"], cert["radius"]):
        far = r >= R
        assert np.all(s.values[far] >= sl * r[far] + sl)
    e, _ = _slice("exp_decay", -10, 10, 401)
    assert not superlinearity_certificate([e], [1])["certified"]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(-1e4, 1e4), st.floats(0, 1)), min_size=1, max_size=60))
def test_phi_integral_bound(samples):
    vals = np.array([v for v, _ in samples])
    meas = np.array([m for _, m in samples])
    meas = meas / max(meas.sum(), 1e-300)
    phi = construct_phi((vals, meas))
    assert float(np.sum(meas * phi(vals))) <= 2.0 + 1e-9
    assert np.all(np.diff(phi.thresholds) > 0)
    r = np.array([10.0, 100.0, 1000.0, 1e4]) + phi.thresholds[-1]
    ratio = phi(r) / r
    assert np.all(np.diff(ratio) > 0)


def test_hessian_of_radial_quartic():
    w = hessian_eigs(builtin("radial_quartic").lagrangian, np.array([1.0, 0.0]))
    assert w == pytest.approx([4.0, 12.0], abs=1e-4)


def test_hessian_min_eig_vectorised():
    f = builtin("double_well").lagrangian
    lam = hessian_min_eig(f, np.array([[0.0], [2.0]]))
    assert lam == pytest.approx([-4.0, 44.0], abs=1e-4)


def test_quintic_gamma_matches_power_to_second_order():
    for p in (1.5, 2.0, 4.0):
        g, dg, d2g = quintic_gamma(p)
        for fn, ref in ((g, 1.0), (dg, p), (d2g, p * (p - 1))):
            assert float(fn(1.0)) == pytest.approx(ref)
        assert float(g(0.0)) == 0.0 and float(dg(0.0)) == 0.0 and float(d2g(0.0)) == 0.0
        assert float(g(2.0)) == pytest.approx(2.0 ** p)


def test_correction_convexifies_double_well():
    f = builtin("double_well").lagrangian
    prof = theta_profile(f, np.linspace(0.1, 3, 30))
    corr = convexifying_correction(f, 4.0, prof, check_radius=3.0)
    assert corr.min_lambda >= -1e-6
    lam = hessian_min_eig(corr.g, np.linspace(-3, 3, 301)[:, None])
    assert np.min(lam) >= -1e-6


def test_correction_p1_rejects_non_vanishing_theta():
    f = builtin("sin_linear").lagrangian
    prof = theta_profile(f, np.linspace(0.1, 12, 60))
    with pytest.raises(ValueError):
        convexifying_correction(f, 1.0, prof)


def test_correction_p1_integrated_gamma():
    # concave bump confined to |xi| < 1, convex outside
    f = Lagrangian("bump", lambda x, u, xi: np.abs(xi[..., 0]) + np.exp(-4 * xi[..., 0] ** 2), xi_dim=1)
    prof = theta_profile(f, np.linspace(0.05, 4, 80))
    corr = convexifying_correction(f, 1.0, prof, check_radius=4.0)
    assert corr.min_lambda >= -1e-6


def test_theta_growth_error():
    f = Lagrangian("wild", lambda x, u, xi: np.cos(xi[..., 0] ** 2) * xi[..., 0] ** 2 + 10, xi_dim=1)
    prof = theta_profile(f, np.linspace(1, 6, 40))
    with pytest.raises(ValueError, match="grows"):
        convexifying_correction(f, 2.0, prof)
