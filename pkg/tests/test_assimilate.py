import numpy as np
import pytest

from filterlab.assimilate import (LikelihoodLedger, filter_recursive, observe_members, phi_matrix,
                                  posterior_density_bounds, recursive_log_weights,
                                  smoothing_posterior)
from filterlab.errors import DegeneratePosterior, InvalidArgument
from filterlab.fields import Grid2
from filterlab.forward_ns import NSConfig, NSForward
from filterlab.metrics import d_T
from filterlab.observe import (Channel, NoiseModel, Observable, SpatialWeight, audit_noise,
                               synthesize_measurements)
from filterlab.probability import PriorSpec, WeightedEnsemble, sample_member, sample_prior

CHANNELS = (Channel(SpatialWeight("cosine", wavevector=(1, 0))),
            Channel(SpatialWeight("cosine", wavevector=(0, 1)), component=1))


@pytest.fixture(scope="module")
def setup():
    spec = PriorSpec(2.0, 8, 2.0, 0.3)
    prior = sample_prior(spec, 10, seed=21)
    fw = NSForward(NSConfig(0.01, Grid2(16), 1 / 64, 0.5))
    obs = [Observable((0.125 * j, 0.125 * (j + 1)), CHANNELS) for j in range(4)]
    nm = NoiseModel(np.eye(2) * 0.05)
    ms = synthesize_measurements(sample_member(spec, 99, 0), fw, obs, nm, seed=1, per_window=4)
    return prior, fw, obs, nm, ms


def test_recursive_equals_smoothing(setup):
    prior, fw, obs, nm, ms = setup
    fd = filter_recursive(prior, fw, obs, ms, per_window=4)
    for k in range(len(ms) + 1):
        post, _ = smoothing_posterior(prior, fw, obs, ms, k, per_window=4)
        assert np.allclose(np.exp(fd.stage_log_weights[k]), post.weights, rtol=1e-12, atol=0)


def test_members_match_continuous_solve(setup):
    prior, fw, obs, nm, ms = setup
    fd = filter_recursive(prior, fw, obs, ms, per_window=4)
    direct = fw.solve(prior.members[4], [0.0, 0.375]).final
    assert np.array_equal(fd.members_at(0.375)[4].coeffs, direct.coeffs)


def test_stage_lookup_is_right_continuous(setup):
    prior, fw, obs, nm, ms = setup
    fd = filter_recursive(prior, fw, obs, ms, per_window=4)
    assert fd.stage_index(0.0) == 0
    assert fd.stage_index(0.125) == 1
    assert fd.stage_index(0.124) == 0
    assert fd.stage_index(0.5) == 4
    assert d_T(fd, fd).value == 0.0


def test_prior_only_is_pushforward(setup):
    prior, fw, obs, nm, ms = setup
    fd = filter_recursive(prior, fw, obs, ms.truncated(0), per_window=4)
    assert fd.n_stages == 0 and fd.horizon == fw.t_end
    assert np.allclose(fd.weights_at(0.3), prior.log_weights)


def test_ledger_and_phi(setup):
    prior, fw, obs, nm, ms = setup
    _, L = observe_members(prior.members, fw, obs, per_window=4)
    phi = phi_matrix(nm, L, ms)
    assert np.allclose(phi[:, 0], -nm.log_density(ms.values[0] - L[:, 0]))
    ledger = LikelihoodLedger.build(prior.log_weights, phi)
    stages = recursive_log_weights(prior.log_weights, phi)
    for k in range(len(ms) + 1):
        assert np.allclose(ledger.smoothing_log_weights(k), stages[k], atol=1e-13)
    cert = posterior_density_bounds(ledger, L, ms, audit_noise(nm))
    assert cert.passed


def test_single_member_posterior_is_itself(setup):
    prior, fw, obs, nm, ms = setup
    one = WeightedEnsemble(prior.members[:1])
    post, _ = smoothing_posterior(one, fw, obs, ms, per_window=4)
    assert post.weights[0] == pytest.approx(1.0)


def test_incompatible_data_raises(setup):
    prior, fw, obs, nm, ms = setup
    compact = NoiseModel(np.eye(2) * 1e-6, "compact")
    far = ms.with_values(ms.values + 100.0)
    far = type(ms)(far.times, far.values, compact)
    with pytest.raises(DegeneratePosterior):
        filter_recursive(prior, fw, obs, far, per_window=4)


def test_schedule_mismatch(setup):
    prior, fw, obs, nm, ms = setup
    shifted = type(ms)(ms.times + 0.01, ms.values, nm)
    with pytest.raises(InvalidArgument):
        smoothing_posterior(prior, fw, obs, shifted)
