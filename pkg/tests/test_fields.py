import numpy as np
import pytest

from filterlab.errors import InvalidArgument
from filterlab.fields import (Grid2, SpectralField, distance, fourier_project, from_physical,
                              gradient_norm, l2_norm, leray_project, single_mode, sobolev_norm,
                              to_physical)


def random_field(grid, rng, div_free=True):
    c = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    c = 0.5 * (c + np.conj(c[:, ::-1, ::-1]))
    u = SpectralField(grid, c, divergence_free=False)
    return leray_project(u) if div_free else u


def test_grid_rejects_odd_and_small():
    for n in (1, 3, 0, 2.5):
        with pytest.raises(InvalidArgument):
            Grid2(n)


def test_single_mode_norm():
    # u = a e^{ik.x} + conj: ||u||^2 = (2 pi)^2 * 2 |a|^2
    u = single_mode(Grid2(8), (1, 2), (2.0, -1.0))
    assert l2_norm(u) == pytest.approx(2 * np.pi * np.sqrt(2 * 5.0), rel=1e-14)


def test_norm_matches_physical_quadrature(rng):
    g = Grid2(8)
    u = random_field(g, rng)
    vals = to_physical(u, 64)
    quad = np.sqrt(np.sum(vals ** 2) * (2 * np.pi / 64) ** 2)
    assert l2_norm(u) == pytest.approx(quad, rel=1e-12)


def test_physical_roundtrip(rng):
    g = Grid2(8)
    u = random_field(g, rng, div_free=False)
    back = from_physical(to_physical(u), g)
    assert distance(u, back) <= 1e-12 * l2_norm(u)


def test_leray_is_projection(rng):
    g = Grid2(8)
    u = random_field(g, rng, div_free=False)
    p = leray_project(u)
    assert p.divergence_defect() < 1e-14
    assert distance(leray_project(p), p) < 1e-13
    assert l2_norm(p) <= l2_norm(u)


def test_truncation_and_resize(rng):
    u = random_field(Grid2(16), rng)
    p = fourier_project(u, 8)
    KX, KY = p.grid.wavenumbers()
    assert np.all(p.coeffs[:, np.maximum(abs(KX), abs(KY)) > 8] == 0)
    # truncating to N=8 and padding back reproduces P_8
    q = u.resized(Grid2(8)).resized(Grid2(16))
    assert distance(p, q) == 0.0
    assert l2_norm(p) <= l2_norm(u)


def test_gradient_norm_single_mode():
    u = single_mode(Grid2(8), (3, 4), (1.0, 0.0))
    # |k| = 5 so ||grad u|| = 5 ||u||
    assert gradient_norm(u) == pytest.approx(5 * l2_norm(u), rel=1e-14)
    assert sobolev_norm(u, 0) == pytest.approx(l2_norm(u), rel=1e-14)


def test_embedding_is_isometric(rng):
    g = Grid2(8)
    u, v = random_field(g, rng), random_field(g, rng)
    assert np.linalg.norm(u.embedding() - v.embedding()) == pytest.approx(distance(u, v), rel=1e-13)


def test_hermitian_symmetry_of_real_fields(tg16):
    assert tg16.hermitian_defect() < 1e-14
    assert tg16.divergence_defect() < 1e-12
