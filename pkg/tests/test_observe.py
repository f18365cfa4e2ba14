import numpy as np
import pytest
from scipy import integrate

from filterlab.errors import ConfigurationError
from filterlab.fields import Grid2, SpectralField, single_mode, distance
from filterlab.forward_claw import CellField, CellGrid
from filterlab.forward_ns import NSConfig, NSForward
from filterlab.observe import (SIGMOID_LIPSCHITZ, Channel, MeasurementSet, NoiseModel, Observable,
                               SpatialWeight, audit_noise, check_tiling, evaluate,
                               lipschitz_estimate, snapshot_times, spatial_integral,
                               synthesize_measurements)
from filterlab.probability import PriorSpec, sample_member


def test_cosine_channel_picks_single_mode():
    # u1 = cos(x): int cos(x) u1 dx = (2 pi)^2 / 2
    g = Grid2(8)
    u = SpectralField.from_function(g, lambda X, Y: (np.cos(X), 0 * X))
    obs = Observable((0, 1), (Channel(SpatialWeight("cosine", wavevector=(1, 0))),
                              Channel(SpatialWeight("constant"), component=1)))
    val = spatial_integral(obs, u)
    assert val[0] == pytest.approx(2 * np.pi ** 2, rel=1e-13)
    assert abs(val[1]) < 1e-13


def test_sigmoid_channel_against_scipy():
    g = Grid2(8)
    u = SpectralField.from_function(g, lambda X, Y: (0.5 * np.sin(Y), 0 * X))
    w = SpatialWeight("bump", center=(np.pi, np.pi), width=1.0)
    obs = Observable((0, 1), (Channel(w, "sigmoid"),), m_quad=128)
    f = lambda y, x: w(x, y) * np.tanh(0.25 * np.sin(y) ** 2)
    ref, _ = integrate.dblquad(f, 0, 2 * np.pi, 0, 2 * np.pi, epsabs=1e-12)
    assert spatial_integral(obs, u)[0] == pytest.approx(ref, rel=1e-8)


def test_sigmoid_lipschitz_constant():
    r = np.linspace(0, 3, 300001)
    assert SIGMOID_LIPSCHITZ == pytest.approx(np.max(2 * r / np.cosh(r * r) ** 2), rel=1e-8)


def test_lipschitz_estimate_holds(rng):
    obs = Observable((0, 1), (Channel(SpatialWeight("cosine", wavevector=(1, 1))),
                              Channel(SpatialWeight("bump"), "sigmoid")))
    spec = PriorSpec(2.0, 8, 3.0, 1.0)
    L = lipschitz_estimate(obs)
    for i in range(5):
        u, v = sample_member(spec, 1, i), sample_member(spec, 2, i)
        diff = np.linalg.norm(spatial_integral(obs, u) - spatial_integral(obs, v))
        assert diff <= L * distance(u, v)


def test_cell_integral():
    g = CellGrid(64)
    u = CellField.from_function(g, np.sin)
    obs = Observable((0, 1), (Channel(SpatialWeight("cosine", wavevector=(1,), phase=-np.pi / 2)),))
    assert spatial_integral(obs, u)[0] == pytest.approx(np.pi, rel=1e-12)


def test_window_average_of_decaying_mode():
    g = Grid2(8)
    u0 = single_mode(g, (1, 0), (0.0, 0.5))  # u2 = cos(x)
    nu = 0.1
    fw = NSForward(NSConfig(nu, g, 1 / 256, 1.0))
    obs = Observable((0.0, 1.0), (Channel(SpatialWeight("cosine", wavevector=(1, 0)), component=1),))
    traj = fw.solve(u0, np.linspace(0, 1, 257))
    exact = 2 * np.pi ** 2 * (1 - np.exp(-nu)) / nu
    assert evaluate(obs, traj)[0] == pytest.approx(exact, rel=1e-5)


def test_tiling_and_snapshots():
    obs = [Observable((0, 0.5)), Observable((0.5, 1.0))]
    assert np.allclose(check_tiling(obs), [0, 0.5, 1.0])
    t = snapshot_times(obs, 4)
    assert len(t) == 9 and t[4] == 0.5
    with pytest.raises(ConfigurationError):
        check_tiling([Observable((0, 0.5)), Observable((0.6, 1.0))])


@pytest.mark.parametrize("kind", ["gaussian", "mixture", "compact"])
def test_noise_density_normalized_and_sampled(kind):
    G = np.array([[0.04, 0.01], [0.01, 0.09]])
    nm = NoiseModel(G, kind)
    lim = 7.0 * np.sqrt(G.diagonal()) * (3 if kind == "mixture" else 1)
    x = np.linspace(-lim[0], lim[0], 1201)
    y = np.linspace(-lim[1], lim[1], 1201)
    X, Y = np.meshgrid(x, y, indexing="ij")
    dens = nm.density(np.stack([X, Y], axis=-1))
    mass = np.trapezoid(np.trapezoid(dens, y, axis=1), x)
    assert mass == pytest.approx(1.0, abs=1e-3)
    s = nm.sample(np.random.default_rng(0), 40000)
    if kind == "gaussian":
        assert np.allclose(np.cov(s.T), G, atol=3e-3)


def test_gaussian_log_density_matches_scipy():
    from scipy.stats import multivariate_normal
    G = np.diag([0.5, 2.0, 1.0])
    y = np.random.default_rng(1).standard_normal((10, 3))
    assert np.allclose(NoiseModel(G).log_density(y), multivariate_normal(cov=G).logpdf(y))


def test_noise_audit_outcomes():
    G = np.eye(2) * 0.3
    g = audit_noise(NoiseModel(G))
    assert g.passed
    assert g.lipschitz == pytest.approx(NoiseModel(G).analytic_lipschitz(), rel=1e-3)
    assert audit_noise(NoiseModel(G, "mixture")).passed
    c = audit_noise(NoiseModel(G, "compact"))
    assert not c.tail and c.B_rho == np.inf


def test_measurements_are_reproducible():
    g = Grid2(8)
    u = sample_member(PriorSpec(2.0, 8, 2.0, 0.1), 7, 0)
    fw = NSForward(NSConfig(0.01, g, 1 / 64, 0.5))
    obs = [Observable((0, 0.25), (Channel(),)), Observable((0.25, 0.5), (Channel(),))]
    nm = NoiseModel(np.eye(1) * 0.01)
    a = synthesize_measurements(u, fw, obs, nm, seed=4, per_window=4)
    b = synthesize_measurements(u, fw, obs, nm, seed=4, per_window=4)
    clean = synthesize_measurements(u, fw, obs, nm, seed=4, per_window=4, add_noise=False)
    assert np.array_equal(a.values, b.values)
    assert np.allclose(a.times, [0.25, 0.5])
    assert np.array_equal(a.values - clean.values, nm.sample(np.random.default_rng(4), 2))
    assert a.distance(a) == 0.0
    assert isinstance(a.truncated(1), MeasurementSet) and len(a.truncated(1)) == 1
