import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from filterlab.errors import BlowUpError, ConfigurationError, DegeneratePosterior, InvalidArgument
from filterlab.fields import Grid2, l2_norm
from filterlab.forward_ns import NSConfig, NSForward
from filterlab.probability import (EnsembleTrajectory, PriorSpec, WeightedEnsemble, ess, moment,
                                   normalize_log_weights, propagate, pushforward, sample_member,
                                   sample_prior)


def test_prior_draws_are_real_divergence_free_and_bounded():
    spec = PriorSpec(2.0, 8, 1.5, sigma=1.0)
    ens = sample_prior(spec, 12, seed=3)
    for u in ens.members:
        assert u.hermitian_defect() < 1e-14
        assert u.divergence_defect() < 1e-13
        assert l2_norm(u) <= 1.5 * (1 + 1e-12)


def test_prior_band_and_mean_zero():
    spec = PriorSpec(2.0, 6, 100.0, sigma=1.0)
    u = sample_member(spec, 1, 0)
    KX, KY = u.grid.wavenumbers()
    band = np.maximum(abs(KX), abs(KY))
    assert np.all(u.coeffs[:, band > 6] == 0)
    assert np.all(u.coeffs[:, band == 0] == 0)


def test_sampling_is_seeded_and_thread_independent():
    spec = PriorSpec(2.0, 8, 2.0, 0.1)
    a = sample_prior(spec, 6, seed=9, threads=1)
    b = sample_prior(spec, 6, seed=9, threads=3)
    c = sample_prior(spec, 6, seed=10)
    assert all(np.array_equal(x.coeffs, y.coeffs) for x, y in zip(a.members, b.members))
    assert not np.array_equal(a.members[0].coeffs, c.members[0].coeffs)
    # member i does not depend on the ensemble size
    assert np.array_equal(sample_prior(spec, 2, seed=9).members[1].coeffs, a.members[1].coeffs)


def test_burgers_prior():
    spec = PriorSpec(2.0, 8, 1.0, 1.0, divergence_free=False, model="burgers1d", n_cells=64)
    u = sample_member(spec, 2, 0)
    assert u.grid.n_cells == 64 and u.l2_norm() <= 1.0 + 1e-12
    assert abs(u.values.sum()) < 1e-12


def test_prior_spec_validation():
    with pytest.raises(ConfigurationError):
        PriorSpec(1.0, 8, 1.0)
    with pytest.raises(ConfigurationError):
        PriorSpec(2.0, 8, -1.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=20))
def test_normalized_weights_sum_to_one(lw):
    w = np.exp(normalize_log_weights(np.array(lw)))
    assert abs(w.sum() - 1.0) < 1e-12


def test_degenerate_weights_raise():
    with pytest.raises(DegeneratePosterior):
        normalize_log_weights(np.full(3, -np.inf))


def test_ess_and_moment(small_prior):
    _, ens = small_prior
    assert ess(ens) == pytest.approx(len(ens))
    one_hot = WeightedEnsemble(ens.members, [0.0] + [-np.inf] * (len(ens) - 1))
    assert ess(one_hot) == pytest.approx(1.0)
    assert moment(one_hot, 2) == pytest.approx(l2_norm(ens.members[0]))
    assert moment(ens, 1) <= moment(ens, 2) + 1e-15


def test_ensemble_validation(small_prior):
    _, ens = small_prior
    with pytest.raises(InvalidArgument):
        WeightedEnsemble([])
    with pytest.raises(InvalidArgument):
        WeightedEnsemble(ens.members, [0.0])
    with pytest.raises(InvalidArgument):
        WeightedEnsemble([ens.members[0], ens.members[1].resized(Grid2(16))])


def test_pushforward_keeps_weights_and_order(small_prior):
    _, ens = small_prior
    ens = WeightedEnsemble(ens.members, normalize_log_weights(np.arange(len(ens), dtype=float)))
    fw = NSForward(NSConfig(0.01, Grid2(16), 1 / 64, 0.25))
    out = pushforward(ens, fw, 0.25, threads=2)
    assert np.array_equal(out.log_weights, ens.log_weights)
    direct = fw.solve(ens.members[3], [0.0, 0.25]).final
    assert np.array_equal(out.members[3].coeffs, direct.coeffs)


def test_ensemble_trajectory(small_prior):
    _, ens = small_prior
    fw = NSForward(NSConfig(0.01, Grid2(16), 1 / 64, 0.25))
    tr = EnsembleTrajectory.from_forward(ens, fw, [0.0, 0.125, 0.25])
    assert tr.n_members == len(ens)
    assert len(tr.member(2)) == 3
    assert tr.at(0.125).members[0] is tr.states[1][0]


def test_blowup_is_tagged_with_member():
    class Exploding:
        def iterate(self, u, times):
            for t in times:
                if t > 0 and u is bad:
                    raise BlowUpError("boom", step=1, time=t)
                yield t, u
    spec = PriorSpec(2.0, 8, 2.0, 0.1)
    ens = sample_prior(spec, 3, 1)
    bad = ens.members[2]
    with pytest.raises(BlowUpError) as err:
        list(propagate(ens.members, Exploding(), [0.0, 1.0]))
    assert err.value.member == 2
