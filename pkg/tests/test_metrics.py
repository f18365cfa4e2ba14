import itertools

import numpy as np
import pytest
from scipy.special import j1

from filterlab.errors import InvalidArgument
from filterlab.fields import Grid2, SpectralField
from filterlab.forward_claw import CellField, CellGrid
from filterlab.metrics import (ball_multiplier, ball_multiplier_quadrature, cost_matrix,
                               d_T_from_costs, kantorovich_lower_bound, lipschitz_fit,
                               piecewise_trapz, s2_bruteforce, s2_squared, structure_bound,
                               transport, w1)
from filterlab.probability import PriorSpec, WeightedEnsemble, sample_prior


def brute_assignment(C):
    n = C.shape[0]
    return min(sum(C[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n))) / n


def test_transport_matches_permutations(rng):
    for _ in range(20):
        C = rng.random((5, 5))
        u = np.full(5, 0.2)
        assert transport(C, u, u).cost == pytest.approx(brute_assignment(C), abs=1e-12)


def test_lp_path_certificate(rng):
    C = rng.random((7, 4))
    a = rng.random(7); a /= a.sum()
    b = rng.random(4); b /= b.sum()
    plan = transport(C, a, b)
    assert plan.method == "highs-ds"
    assert plan.marginal_residual() < 1e-12
    assert abs(plan.dual_gap) < 1e-10


def test_lp_matches_assignment_on_uniform(rng):
    C = rng.random((6, 6))
    u = np.full(6, 1 / 6)
    lp = transport(C, u + 0.0, np.concatenate([u[:-1], [1 - u[:-1].sum()]]))
    assert lp.cost == pytest.approx(transport(C, u, u).cost, abs=1e-12)


def test_w1_one_dimensional_oracle(rng):
    # on the line W1 between empirical measures is the L1 distance of the CDFs
    from scipy.stats import wasserstein_distance
    g = CellGrid(16)
    base = CellField(g, np.ones(16) / np.sqrt(2 * np.pi))
    xa, xb = rng.standard_normal(6), rng.standard_normal(9)
    wa, wb = rng.random(6), rng.random(9)
    A = WeightedEnsemble([base * x for x in xa], np.log(wa / wa.sum()))
    B = WeightedEnsemble([base * x for x in xb], np.log(wb / wb.sum()))
    val, _ = w1(A, B)
    assert val == pytest.approx(wasserstein_distance(xa, xb, wa, wb), abs=1e-12)


def test_w1_rejects_unnormalized(small_prior):
    _, ens = small_prior
    bad = WeightedEnsemble(ens.members, np.zeros(len(ens)))
    with pytest.raises(InvalidArgument):
        w1(bad, ens)


def test_kantorovich_bound_below_w1(small_prior):
    _, ens = small_prior
    other = sample_prior(PriorSpec(2.0, 8, 2.0, 0.1), 5, seed=77)
    val, _ = w1(ens, other)
    assert kantorovich_lower_bound(ens, other) <= val + 1e-12


def test_cost_matrix_across_grids(small_prior):
    _, ens = small_prior
    fine = [m.resized(Grid2(16)) for m in ens.members]
    C = cost_matrix(ens.members[:3], fine[:3])
    assert np.allclose(np.diag(C), 0.0, atol=1e-14)


def test_ball_multiplier_matches_quadrature():
    for k in [(1, 0), (3, 4), (7, 2)]:
        for r in (0.05, 0.4, 2.0):
            exact = ball_multiplier(np.hypot(*k), r)
            assert exact == pytest.approx(ball_multiplier_quadrature(np.array(k), r), rel=1e-10)
    x = np.array([1e-5, 2e-4])
    assert np.allclose(ball_multiplier(x, 1.0), 2 * (1 - 2 * j1(x) / x), rtol=1e-6)


def test_s2_against_shift_oracle(small_prior):
    _, ens = small_prior
    u = ens.members[0]
    for r in (0.1, 0.4):
        assert np.sqrt(s2_squared(u, [r])[0]) == pytest.approx(s2_bruteforce(u, r), rel=1e-10)


def test_s2_small_radius_gradient_bound(small_prior):
    from filterlab.fields import gradient_norm
    _, ens = small_prior
    for u in ens.members:
        for r in (0.05, 0.2, 1.0):
            assert np.sqrt(s2_squared(u, [r])[0]) <= r / 2 * gradient_norm(u) * (1 + 1e-12)


def test_s2_constant_is_zero():
    g = Grid2(4)
    c = np.zeros(g.shape, dtype=complex)
    c[0, 4, 4] = 1.0
    u = SpectralField(g, c, divergence_free=False)
    assert s2_squared(u, [0.3])[0] == 0.0
    with pytest.raises(InvalidArgument):
        s2_squared(u, [4.0])


def test_structure_bound_formula():
    b = structure_bound([0.1, 0.2], 0.02, 3.0)
    assert np.allclose(b, np.array([0.1, 0.2]) / np.sqrt(0.04) * 3.0)


def test_piecewise_trapz_right_continuous():
    # stage value equals the stage index; integral over [0,1] and [1,2] is 0 + 1
    t = np.linspace(0, 2, 9)
    total, right, left = piecewise_trapz(t, [0.0, 1.0, 2.0], 3, lambda i, j: float(j))
    assert total == pytest.approx(1.0)
    assert right[4] == 1.0 and left[4] == 0.0


def test_d_T_zero_for_identical():
    C = [np.array([[0.0, 1.0], [1.0, 0.0]])] * 5
    lw = [np.log([0.5, 0.5]), np.log([0.2, 0.8])]
    res = d_T_from_costs(np.linspace(0, 1, 5), [0.0, 0.5, 1.0], C, lw, lw)
    assert res.value == 0.0 and res.sup == 0.0


def test_d_T_piecewise_constant_shift():
    # two members at distance 1; weights differ by 0.3 on the second stage only
    C = [np.array([[0.0, 1.0], [1.0, 0.0]])] * 5
    a = [np.log([0.5, 0.5]), np.log([0.5, 0.5])]
    b = [np.log([0.5, 0.5]), np.log([0.2, 0.8])]
    res = d_T_from_costs(np.linspace(0, 1, 5), [0.0, 0.5, 1.0], C, a, b)
    assert res.value == pytest.approx(0.3 * 0.5)
    assert res.sup == pytest.approx(0.3)


def test_lipschitz_fit():
    slope, ratio = lipschitz_fit([1.0, 2.0], [2.0, 4.0])
    assert slope == pytest.approx(2.0) and ratio == pytest.approx(2.0)
    with pytest.raises(InvalidArgument):
        lipschitz_fit([], [])
    with pytest.raises(InvalidArgument):
        lipschitz_fit([0.0], [1.0])
