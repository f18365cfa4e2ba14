"""Periodic spectral fields on the torus [0, 2pi]^2.

A :class:`SpectralField` stores the truncated Fourier coefficients of a real
two-component vector field,

    u(x) = sum_{|k|_inf <= N} u_k exp(i k.x),

over the full square of wavevectors ``-N <= kx, ky <= N``.  Coefficients are
kept in centred order: ``coeffs[c, kx + N, ky + N]``.  Hermitian symmetry
``u_{-k} = conj(u_k)`` is an invariant of every constructor in this module.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np
from scipy import fft as sfft

from .errors import InvalidArgument

TWO_PI = 2.0 * np.pi
N_COMPONENTS = 2
DIMENSION = 2


@dataclass(frozen=True)
class Grid2:
    """Fourier truncation ``|k|_inf <= n_modes`` on the fixed torus."""

    n_modes: int

    def __post_init__(self):
        n = self.n_modes
        if int(n) != n or n < 2 or n % 2:
            raise InvalidArgument(f"n_modes must be an even integer >= 2, got {n!r}")

    @property
    def delta(self) -> float:
        return 1.0 / self.n_modes

    @property
    def width(self) -> int:
        return 2 * self.n_modes + 1

    @property
    def shape(self) -> tuple:
        return (N_COMPONENTS, self.width, self.width)

    def wavenumbers(self):
        """Return ``(KX, KY)`` integer arrays in centred order."""
        k = np.arange(-self.n_modes, self.n_modes + 1)
        return np.meshgrid(k, k, indexing="ij")

    def min_quadrature(self) -> int:
        return 2 * self.n_modes + 1

    def default_quadrature(self) -> int:
        # smallest even size that is alias free for |u|^2
        return 2 * self.n_modes + 2


@dataclass(frozen=True, eq=False)
class SpectralField:
    grid: Grid2
    coeffs: np.ndarray
    divergence_free: bool = False
    _cache: dict = dc_field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.complex128)
        if c.shape != self.grid.shape:
            raise InvalidArgument(
                f"coefficient shape {c.shape} does not match grid {self.grid.shape}")
        if c is self.coeffs and c.flags.writeable:
            c = c.copy()
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    # -- construction -------------------------------------------------------

    @classmethod
    def zeros(cls, grid: Grid2, divergence_free=True):
        return cls(grid, np.zeros(grid.shape, dtype=np.complex128), divergence_free)

    @classmethod
    def from_function(cls, grid: Grid2, func, m_quad=None):
        """Sample ``func(X, Y) -> (u1, u2)`` on a uniform grid and transform."""
        m = m_quad or grid.default_quadrature()
        x = TWO_PI * np.arange(m) / m
        X, Y = np.meshgrid(x, x, indexing="ij")
        u1, u2 = func(X, Y)
        samples = np.stack([np.broadcast_to(u1, X.shape), np.broadcast_to(u2, X.shape)])
        return from_physical(samples, grid)

    # -- arithmetic ---------------------------------------------------------

    def _check_same_grid(self, other):
        if not isinstance(other, SpectralField):
            return NotImplemented
        if other.grid != self.grid:
            raise InvalidArgument(f"grid mismatch: {self.grid} vs {other.grid}")

    def __add__(self, other):
        self._check_same_grid(other)
        return SpectralField(self.grid, self.coeffs + other.coeffs,
                             self.divergence_free and other.divergence_free)

    def __sub__(self, other):
        self._check_same_grid(other)
        return SpectralField(self.grid, self.coeffs - other.coeffs,
                             self.divergence_free and other.divergence_free)

    def __mul__(self, scalar):
        s = float(scalar)
        return SpectralField(self.grid, self.coeffs * s, self.divergence_free)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    # -- queries ------------------------------------------------------------

    def coeff(self, kx: int, ky: int) -> np.ndarray:
        n = self.grid.n_modes
        if max(abs(kx), abs(ky)) > n:
            return np.zeros(N_COMPONENTS, dtype=np.complex128)
        return self.coeffs[:, kx + n, ky + n]

    def l2_norm(self) -> float:
        return l2_norm(self)

    def embedding(self) -> np.ndarray:
        """Real vector whose Euclidean norm equals the L2 norm of the field."""
        emb = self._cache.get("embedding")
        if emb is None:
            emb = TWO_PI * self.coeffs.reshape(-1).view(np.float64)
            emb.flags.writeable = False
            self._cache["embedding"] = emb
        return emb

    def hermitian_defect(self) -> float:
        c = self.coeffs
        flipped = np.conj(c[:, ::-1, ::-1])
        scale = max(np.abs(c).max(), 1e-300)
        return float(np.abs(c - flipped).max() / scale)

    def divergence_defect(self) -> float:
        """``max_k |<k, u_k>| / max_k |u_k|``."""
        KX, KY = self.grid.wavenumbers()
        div = KX * self.coeffs[0] + KY * self.coeffs[1]
        scale = np.abs(self.coeffs).max()
        if scale == 0:
            return 0.0
        return float(np.abs(div).max() / scale)

    def resized(self, grid: Grid2) -> "SpectralField":
        """Zero-pad or truncate to another Fourier grid (truncation is P_N)."""
        if grid == self.grid:
            return self
        n_old, n_new = self.grid.n_modes, grid.n_modes
        out = np.zeros(grid.shape, dtype=np.complex128)
        n = min(n_old, n_new)
        out[:, n_new - n:n_new + n + 1, n_new - n:n_new + n + 1] = \
            self.coeffs[:, n_old - n:n_old + n + 1, n_old - n:n_old + n + 1]
        return SpectralField(grid, out, self.divergence_free)


def _as_common_grid(u: SpectralField, v: SpectralField):
    if u.grid == v.grid:
        return u, v
    g = u.grid if u.grid.n_modes > v.grid.n_modes else v.grid
    return u.resized(g), v.resized(g)


def distance(u: SpectralField, v: SpectralField) -> float:
    """L2 distance between fields, padding the coarser one if needed."""
    u, v = _as_common_grid(u, v)
    return TWO_PI * float(np.sqrt(np.sum(np.abs(u.coeffs - v.coeffs) ** 2)))


# -- projections -------------------------------------------------------------

def fourier_project(field: SpectralField, m: int) -> SpectralField:
    """Zero every coefficient with ``|k|_inf > m``."""
    if m < 0:
        raise InvalidArgument(f"projection order must be nonnegative, got {m}")
    n = field.grid.n_modes
    if m > n:
        raise InvalidArgument(f"projection order {m} exceeds truncation {n}")
    if m == n:
        return field
    out = np.zeros_like(field.coeffs)
    out[:, n - m:n + m + 1, n - m:n + m + 1] = field.coeffs[:, n - m:n + m + 1, n - m:n + m + 1]
    return SpectralField(field.grid, out, field.divergence_free)


def _leray_coeffs(c: np.ndarray, KX, KY) -> np.ndarray:
    k2 = KX * KX + KY * KY
    k2 = np.where(k2 == 0, 1, k2)
    kdotu = (KX * c[0] + KY * c[1]) / k2
    out = np.empty_like(c)
    out[0] = c[0] - KX * kdotu
    out[1] = c[1] - KY * kdotu
    return out


def leray_project(field: SpectralField) -> SpectralField:
    """Per-mode projection ``(I - k k^T / |k|^2) u_k``; mean mode unchanged."""
    KX, KY = field.grid.wavenumbers()
    return SpectralField(field.grid, _leray_coeffs(field.coeffs, KX, KY), True)


# -- norms --------------------------------------------------------------------

def l2_norm(field: SpectralField) -> float:
    return TWO_PI * float(np.sqrt(np.sum(np.abs(field.coeffs) ** 2)))


def sobolev_norm(field: SpectralField, s: float) -> float:
    KX, KY = field.grid.wavenumbers()
    weight = (1.0 + KX * KX + KY * KY) ** float(s)
    return TWO_PI * float(np.sqrt(np.sum(weight * np.abs(field.coeffs) ** 2)))


def gradient_norm(field: SpectralField) -> float:
    """``||grad u||_{L2}``, the H1 seminorm."""
    KX, KY = field.grid.wavenumbers()
    k2 = KX * KX + KY * KY
    return TWO_PI * float(np.sqrt(np.sum(k2 * np.abs(field.coeffs) ** 2)))


# -- physical space -------------------------------------------------------------

def _check_quadrature(grid: Grid2, m: int):
    if m < grid.min_quadrature():
        raise InvalidArgument(
            f"quadrature size {m} too small for N={grid.n_modes}; need >= {grid.min_quadrature()}")


def centred_to_rfft(coeffs: np.ndarray, n_modes: int, m: int) -> np.ndarray:
    """Scatter centred coefficients into an ``rfft2`` layout of size m x m."""
    n = n_modes
    out = np.zeros(coeffs.shape[:-2] + (m, m // 2 + 1), dtype=np.complex128)
    rows = np.arange(-n, n + 1) % m
    out[..., rows, :n + 1] = coeffs[..., :, n:]
    return out


def rfft_to_centred(spec: np.ndarray, n_modes: int) -> np.ndarray:
    """Gather a Hermitian centred block from an ``rfft2`` layout array."""
    n = n_modes
    m = spec.shape[-2]
    rows = np.arange(-n, n + 1) % m
    out = np.empty(spec.shape[:-2] + (2 * n + 1, 2 * n + 1), dtype=np.complex128)
    out[..., :, n:] = spec[..., rows, :n + 1]
    # ky = 0 column: enforce exact symmetry between kx and -kx
    out[..., :n, n] = np.conj(out[..., 2 * n:n:-1, n])
    out[..., n, n] = out[..., n, n].real
    out[..., :, :n] = np.conj(out[..., ::-1, 2 * n:n:-1])
    return out


def to_physical(field: SpectralField, m_quad: int | None = None) -> np.ndarray:
    """Evaluate the field on the ``m x m`` uniform grid ``x_a = 2 pi a / m``.

    Returns an array of shape ``(2, m, m)`` indexed ``[component, x, y]``.
    """
    m = m_quad or field.grid.default_quadrature()
    _check_quadrature(field.grid, m)
    spec = centred_to_rfft(field.coeffs, field.grid.n_modes, m)
    return sfft.irfft2(spec, s=(m, m), norm="forward")


def from_physical(samples, grid: Grid2) -> SpectralField:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 3 or samples.shape[0] != N_COMPONENTS or samples.shape[1] != samples.shape[2]:
        raise InvalidArgument(f"expected samples of shape (2, m, m), got {samples.shape}")
    _check_quadrature(grid, samples.shape[1])
    spec = sfft.rfft2(samples, norm="forward")
    return SpectralField(grid, rfft_to_centred(spec, grid.n_modes))


def physical_coordinates(m: int):
    x = TWO_PI * np.arange(m) / m
    return np.meshgrid(x, x, indexing="ij")


def single_mode(grid: Grid2, k: Sequence[int], amplitude: Sequence[complex]) -> SpectralField:
    """Real field ``a e^{ik.x} + conj(a) e^{-ik.x}`` (mean mode if k = 0)."""
    n = grid.n_modes
    kx, ky = int(k[0]), int(k[1])
    c = np.zeros(grid.shape, dtype=np.complex128)
    a = np.asarray(amplitude, dtype=np.complex128)
    if kx == 0 and ky == 0:
        c[:, n, n] = a.real
    else:
        c[:, kx + n, ky + n] = a
        c[:, -kx + n, -ky + n] = np.conj(a)
    return SpectralField(grid, c)


class Trajectory:
    """Time-indexed states ``t -> S_t(u0)`` from a forward solve.

    States are any field type exposing ``grid``; all share one grid.
    """

    __slots__ = ("times", "states")

    def __init__(self, times, states):
        times = np.asarray(times, dtype=np.float64)
        states = tuple(states)
        if times.ndim != 1 or len(times) < 1:
            raise InvalidArgument("trajectory needs at least one snapshot")
        if len(states) != len(times):
            raise InvalidArgument("times and states differ in length")
        if np.any(np.diff(times) <= 0):
            raise InvalidArgument("snapshot times must be strictly increasing")
        g = states[0].grid
        if any(s.grid != g for s in states):
            raise InvalidArgument("trajectory states live on different grids")
        times.flags.writeable = False
        self.times = times
        self.states = states

    def __len__(self):
        return len(self.times)

    def __iter__(self):
        return iter(zip(self.times, self.states))

    @property
    def grid(self):
        return self.states[0].grid

    @property
    def initial(self):
        return self.states[0]

    @property
    def final(self):
        return self.states[-1]

    def index_of(self, t: float, atol: float = 1e-9) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > atol * max(1.0, abs(t)):
            raise InvalidArgument(f"time {t} is not a stored snapshot")
        return i

    def at(self, t: float):
        return self.states[self.index_of(t)]

    def shifted(self, t0: float) -> "Trajectory":
        return Trajectory(self.times + t0, self.states)
