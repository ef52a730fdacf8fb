import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from oracles import brute_envelope_1d, brute_envelope_2d, lp_envelope, lp_minorant
from relaxkit.convexify import (
    XiPolicy,
    best_affine_minorant,
    bipolar_limit,
    decompose,
    envelope,
    envelope_1d,
    restricted_bipolar,
)
from relaxkit.core import SENTINEL, BoxDomain, SampledSlice, is_sentinel, make_grid, sample_slice
from relaxkit.gallery import builtin

# frozen from the brute-force oracle (tests/oracles.py), see test_oracle_tables_reproduce
TABLE_1D = [3.0, 1.0, 1.0, 1.0, 4 / 3, 5 / 3, 2.0, 6.0]
TABLE_1D_INF = [3.0, 7 / 3, 5 / 3, 1.0, 4 / 3, 5 / 3, 2.0, 6.0]
TABLE_2D = [2.0, 0.0, 2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 2.0]


def _grid1(n=8, lo=0.0, hi=7.0):
    return make_grid(BoxDomain([lo], [hi]), [n])


def test_oracle_tables_reproduce():
    x = np.arange(8.0)
    assert np.allclose(brute_envelope_1d(x, [3, 1, 4, 1, 5, 9, 2, 6]), TABLE_1D)
    assert np.allclose(brute_envelope_1d(x, [3, np.inf, 4, 1, np.inf, 9, 2, 6]), TABLE_1D_INF)
    g = make_grid(BoxDomain([-1, -1], [1, 1]), [3, 3])
    assert np.allclose(brute_envelope_2d(g.nodes(), [2, 0, 2, 1, 3, 1, 2, 0, 2]), TABLE_2D)


def test_envelope_1d_frozen_table():
    env = envelope(SampledSlice(_grid1(), [3, 1, 4, 1, 5, 9, 2, 6]))
    assert np.allclose(env.env_values, TABLE_1D, atol=1e-12)
    assert env.method == "chain_1d"


def test_envelope_1d_skips_sentinels():
    env = envelope(SampledSlice(_grid1(), [3, np.inf, 4, 1, np.inf, 9, 2, 6]))
    assert np.allclose(env.env_values, TABLE_1D_INF, atol=1e-12)
    # the sentinel node still receives a finite envelope value and certificate
    cert = env.certificates[1]
    assert cert is not None and 1 not in cert.indices


def test_envelope_2d_frozen_table():
    g = make_grid(BoxDomain([-1, -1], [1, 1]), [3, 3])
    env = envelope(SampledSlice(g, [2, 0, 2, 1, 3, 1, 2, 0, 2]))
    assert np.allclose(env.env_values, TABLE_2D, atol=1e-12)


def test_double_well_certificate_at_origin():
    g = make_grid(BoxDomain([-2], [2]), [41])
    s = sample_slice(builtin("double_well").lagrangian, g)
    env = envelope(s)
    mid = g.find_node([0.0])
    assert env.env_values[mid] == 0.0
    cert = env.certificates[mid]
    assert sorted(cert.points[:, 0].tolist()) == [-1.0, 1.0]
    assert np.allclose(cert.weights, 0.5)
    # f is convex outside [-1, 1], so the envelope equals f there
    out = np.abs(g.nodes()[:, 0]) >= 1
    assert np.allclose(env.env_values[out], s.values[out])


def test_double_well_2d_agrees_with_1d_on_axis():
    g2 = make_grid(BoxDomain([-2, -2], [2, 2]), [21, 21])
    env2 = envelope(sample_slice(builtin("double_well", dim=2).lagrangian, g2))
    r = np.linalg.norm(g2.nodes(), axis=1)
    expected = np.maximum(r ** 2 - 1, 0) ** 2
    # radial envelope ((|xi|^2-1)^+)^2 holds away from the box corners
    inner = r <= 1.8
    assert np.max(np.abs(env2.env_values[inner] - expected[inner])) < 1e-7


def test_all_sentinel_is_an_error():
    with pytest.raises(ValueError, match="sentinel"):
        envelope(SampledSlice(_grid1(3), [np.inf] * 3))


def test_affine_input_is_flagged_degenerate():
    g = make_grid(BoxDomain([-1, -1], [1, 1]), [4, 4])
    vals = 2 + g.nodes() @ np.array([0.5, -0.25])
    env = envelope(SampledSlice(g, vals))
    assert env.degenerate
    assert np.allclose(env.env_values, vals, atol=1e-12)


def test_collinear_finite_nodes_fall_back_to_line():
    g = make_grid(BoxDomain([-1, -1], [1, 1]), [5, 5])
    vals = np.full(g.size, np.inf)
    row = np.flatnonzero(np.isclose(g.nodes()[:, 1], 0.0))
    vals[row] = (g.nodes()[row, 0] ** 2 - 0.25) ** 2
    with pytest.warns(RuntimeWarning, match="collinear"):
        env = envelope(SampledSlice(g, vals))
    assert env.notes
    expected = brute_envelope_1d(g.nodes()[row, 0], vals[row])
    assert np.allclose(env.env_values[row], expected, atol=1e-12)
    assert np.all(is_sentinel(np.delete(env.env_values, row)))


def test_envelope_1d_recession_rays_close_the_chain():
    e = builtin("halfline")
    g = make_grid(BoxDomain([-2], [3]), [101])
    s = sample_slice(e.lagrangian, g, with_recession=True)
    env = envelope_1d(s)
    assert env.rays == (math.inf, 0.0)
    assert np.allclose(env.env_values, e.envelope_at(0, 0, g.nodes()), atol=1e-12)


def test_restricted_bipolar_rejects_small_box():
    g = make_grid(BoxDomain([-1], [1]), [11])
    s = SampledSlice(g, np.ones(11))
    with pytest.raises(ValueError, match="does not contain"):
        restricted_bipolar(s, 2.0)
    with pytest.raises(ValueError):
        restricted_bipolar(s, 0.0)


def test_decompose_off_node_and_outside():
    g = make_grid(BoxDomain([-2], [2]), [5])
    env = envelope(SampledSlice(g, [4, 1, 3, 1, 4]))
    d = decompose(env, [0.3])
    assert d.barycenter() == pytest.approx([0.3])
    assert d.value_on(env.source) == pytest.approx(1.0)
    with pytest.raises(ValueError, match="outside"):
        decompose(env, [5.0])


def test_best_affine_minorant_matches_lp():
    g = make_grid(BoxDomain([-1, -1], [1, 1]), [5, 5])
    rng = np.random.default_rng(3)
    vals = rng.uniform(0, 3, g.size)
    s = SampledSlice(g, vals)
    for xi0 in ([0.0, 0.0], [0.5, -0.5], [0.25, 0.75]):
        m = best_affine_minorant(s, xi0)
        assert np.all(m(g.nodes()) <= vals + 1e-9)
        assert float(m(np.array(xi0))[0]) == pytest.approx(lp_minorant(g.nodes(), vals, xi0)[0], abs=1e-8)


def test_xi_policy_grid_contains_radius():
    g = XiPolicy(spacing=0.1, margin=0.5).grid_for(2.0, 2)
    assert g.box.hi.tolist() == [2.5, 2.5]
    assert np.all(g.spacing <= 0.1 + 1e-12)


def test_bipolar_limit_stabilises_for_double_well_not_for_exp_decay():
    dw = builtin("double_well").lagrangian
    ok, K_star, _ = bipolar_limit(dw, None, 0.0, [2, 3, 4], XiPolicy(spacing=0.05))
    assert ok and K_star == 2
    ed = builtin("exp_decay").lagrangian
    ok, _, env = bipolar_limit(ed, None, 0.0, [2, 3, 4], XiPolicy(spacing=0.05))
    assert not ok
    assert np.allclose(env.env_values[env.finite], math.exp(-4), atol=1e-12)


def test_bipolar_limit_rejects_non_increasing_ladder():
    with pytest.raises(ValueError):
        bipolar_limit(builtin("double_well").lagrangian, None, 0.0, [3, 2])


# ---------------------------------------------------------------------------
# properties
# ---------------------------------------------------------------------------

values_1d = st.lists(st.one_of(st.floats(0, 10), st.just(math.inf)), min_size=3, max_size=25).filter(
    lambda v: sum(math.isfinite(a) for a in v) >= 2)


@settings(max_examples=80, deadline=None)
@given(values_1d, st.floats(0.1, 3.0))
def test_1d_matches_brute_force_and_is_consistent(vals, width):
    g = make_grid(BoxDomain([-width], [width]), [len(vals)])
    s = SampledSlice(g, vals)
    env = envelope(s)
    ref = brute_envelope_1d(g.nodes()[:, 0], vals)
    fin = np.isfinite(ref)
    assert np.all(is_sentinel(env.env_values) == ~fin)
    assert np.max(np.abs(env.env_values[fin] - ref[fin]), initial=0) <= 1e-8
    # below f, idempotent, certificates reproduce node and value
    assert np.all(env.env_values[fin] <= s.values[fin] + 1e-12)
    again = envelope(env.as_slice())
    assert np.max(np.abs(again.env_values[fin] - env.env_values[fin]), initial=0) <= 1e-10
    for i in np.flatnonzero(fin):
        c = env.certificates[i]
        assert abs(c.weights.sum() - 1) <= 1e-12
        assert np.allclose(c.barycenter(), g.nodes()[i], atol=1e-9)
        assert abs(c.value_on(s.values) - env.env_values[i]) <= env.tol * max(1, abs(env.env_values[i])) + 1e-12


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(2, 4), st.integers(2, 4), st.integers(0, 2 ** 32 - 1), st.booleans())
def test_2d_matches_lp_oracle(nx, ny, seed, holes):
    rng = np.random.default_rng(seed)
    g = make_grid(BoxDomain([-1, -0.5], [1, 1.5]), [nx, ny])
    vals = rng.uniform(0, 5, g.size)
    if holes:
        vals[rng.random(g.size) < 0.3] = np.inf
    if np.isfinite(vals).sum() < 3:
        return
    P = g.nodes()[np.isfinite(vals)]
    if np.linalg.matrix_rank(P - P[0]) < 2:
        return
    s = SampledSlice(g, vals)
    env = envelope(s)
    for i, q in enumerate(g.nodes()):
        ref = lp_envelope(g.nodes(), vals, q)
        if math.isinf(ref):
            assert is_sentinel(env.env_values[i])
        else:
            assert abs(env.env_values[i] - ref) <= 1e-8
            c = env.certificates[i]
            assert np.allclose(c.barycenter(), q, atol=1e-9)
            assert abs(c.value_on(s.values) - env.env_values[i]) <= 1e-7 * max(1, abs(ref))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_restricted_ladder_is_non_increasing(seed):
    rng = np.random.default_rng(seed)
    g = make_grid(BoxDomain([-3], [3]), [61])
    s = SampledSlice(g, rng.uniform(0, 4, 61))
    prev = None
    for K in (1.0, 1.5, 2.0, 3.0):
        e = restricted_bipolar(s, K).env_values
        if prev is not None:
            both = ~is_sentinel(prev)
            assert np.all(e[both] <= prev[both] + 1e-12)
        prev = e


def test_envelope_of_sentinel_spike_is_finite_only_in_hull():
    g = make_grid(BoxDomain([-2, -2], [2, 2]), [5, 5])
    vals = np.full(g.size, np.inf)
    for p, v in (([0, 0], 0.0), ([2, 0], 1.0), ([0, 2], 1.0)):
        vals[g.find_node(p)] = v
    env = envelope(SampledSlice(g, vals))
    assert env.value_at_node([1, 1]) == pytest.approx(1.0)
    assert env.value_at_node([1, 0]) == pytest.approx(0.5)
    assert env.env_values[g.find_node([-1, 0])] == SENTINEL
