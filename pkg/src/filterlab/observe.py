"""Eulerian observables, measurement noise, and synthetic measurements.

An observable integrates ``phi(x) g(u(x, t))`` over the periodic domain and
over one time window.  Space is handled by a uniform grid (the solver's
alias-free resolution for spectral fields, the cell midpoints for finite
volumes) and time by the trapezoid rule over stored snapshots.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import gamma as gamma_fn
from typing import Sequence

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.optimize import minimize_scalar

from .errors import ConfigurationError, InvalidArgument
from .fields import SpectralField, Trajectory, physical_coordinates, to_physical
from .forward_claw import CellField

TWO_PI = 2.0 * np.pi
WINDOW_ATOL = 1e-9
G_KINDS = ("component", "sigmoid")


@dataclass(frozen=True)
class SpatialWeight:
    """Bounded spatial weight ``phi`` from a small closed family.

    ``constant``: ``a``; ``cosine``: ``a cos(k.x + phase)``;
    ``bump``: ``a exp((sum_i cos(x_i - c_i) - dim) / width^2)``, a periodic bump
    peaking at ``center``.
    """

    kind: str = "constant"
    amplitude: float = 1.0
    wavevector: tuple = (0, 0)
    phase: float = 0.0
    center: tuple = (np.pi, np.pi)
    width: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "cosine", "bump"):
            raise ConfigurationError(f"unknown spatial weight {self.kind!r}")
        if self.kind == "bump" and not self.width > 0:
            raise ConfigurationError("bump width must be positive")
        object.__setattr__(self, "wavevector", tuple(float(k) for k in self.wavevector))
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    def __call__(self, *coords):
        a = self.amplitude
        if self.kind == "constant":
            return np.full(np.shape(coords[0]), a, dtype=np.float64)
        if self.kind == "cosine":
            arg = sum(k * x for k, x in zip(self.wavevector, coords)) + self.phase
            return a * np.cos(arg)
        s = sum(np.cos(x - c) for x, c in zip(coords, self.center))
        return a * np.exp((s - len(coords)) / self.width ** 2)

    @property
    def sup_norm(self) -> float:
        return abs(float(self.amplitude))

    def scaled(self, factor: float) -> "SpatialWeight":
        return SpatialWeight(self.kind, self.amplitude * factor, self.wavevector,
                             self.phase, self.center, self.width)


def _sigmoid_lipschitz() -> float:
    # d/dr tanh(r^2) = 2 r sech^2(r^2); the sup is attained near r = 0.78
    res = minimize_scalar(lambda r: -2.0 * r / np.cosh(r * r) ** 2,
                          bounds=(0.0, 3.0), method="bounded",
                          options={"xatol": 1e-12})
    return float(-res.fun)


SIGMOID_LIPSCHITZ = _sigmoid_lipschitz()


@dataclass(frozen=True)
class Channel:
    """One output coordinate: ``int phi g(u)`` with ``g`` a velocity component
    or the bounded map ``tanh(|u|^2)``."""

    weight: SpatialWeight = SpatialWeight()
    g: str = "component"
    component: int = 0

    def __post_init__(self):
        if self.g not in G_KINDS:
            raise ConfigurationError(f"unknown pointwise map {self.g!r}")
        if self.component not in (0, 1):
            raise ConfigurationError("component must be 0 or 1")

    @property
    def g_lipschitz(self) -> float:
        return 1.0 if self.g == "component" else SIGMOID_LIPSCHITZ


@dataclass(frozen=True)
class Observable:
    window: tuple
    channels: tuple = (Channel(),)
    m_quad: int | None = None

    def __post_init__(self):
        t0, t1 = (float(t) for t in self.window)
        if not t1 > t0 or t0 < 0:
            raise ConfigurationError(f"bad observation window {self.window}")
        if not self.channels:
            raise ConfigurationError("an observable needs at least one channel")
        object.__setattr__(self, "window", (t0, t1))
        object.__setattr__(self, "channels", tuple(self.channels))

    @property
    def d_obs(self) -> int:
        return len(self.channels)


@lru_cache(maxsize=256)
def _weight_samples_2d(weight: SpatialWeight, m: int) -> np.ndarray:
    X, Y = physical_coordinates(m)
    out = weight(X, Y)
    out.flags.writeable = False
    return out


@lru_cache(maxsize=256)
def _weight_samples_1d(weight: SpatialWeight, n: int) -> np.ndarray:
    x = (np.arange(n) + 0.5) * (TWO_PI / n)
    out = weight(x)
    out.flags.writeable = False
    return out


def spatial_integral(obs: Observable, state) -> np.ndarray:
    """``int_D phi g(u(x)) dx`` for every channel at one time."""
    out = np.empty(obs.d_obs)
    if isinstance(state, SpectralField):
        m = obs.m_quad or state.grid.default_quadrature()
        u = to_physical(state, m)
        cell = (TWO_PI / m) ** 2
        speed2 = None
        for c, ch in enumerate(obs.channels):
            phi = _weight_samples_2d(ch.weight, m)
            if ch.g == "component":
                vals = u[ch.component]
            else:
                if speed2 is None:
                    speed2 = u[0] ** 2 + u[1] ** 2
                vals = np.tanh(speed2)
            out[c] = cell * np.sum(phi * vals)
        return out
    if isinstance(state, CellField):
        n = state.grid.n_cells
        for c, ch in enumerate(obs.channels):
            if ch.g == "component" and ch.component != 0:
                raise InvalidArgument("scalar fields have a single component")
            phi = _weight_samples_1d(ch.weight, n)
            vals = state.values if ch.g == "component" else np.tanh(state.values ** 2)
            out[c] = state.grid.delta * np.sum(phi * vals)
        return out
    raise InvalidArgument(f"unsupported state type {type(state).__name__}")


def window_indices(times: np.ndarray, window) -> np.ndarray:
    t0, t1 = window
    times = np.asarray(times)
    tol = WINDOW_ATOL * max(1.0, abs(t1))
    if times[0] > t0 + tol or times[-1] < t1 - tol:
        raise InvalidArgument(f"window {window} lies outside the snapshot span "
                              f"[{times[0]}, {times[-1]}]")
    idx = np.nonzero((times >= t0 - tol) & (times <= t1 + tol))[0]
    if len(idx) < 2 or abs(times[idx[0]] - t0) > tol or abs(times[idx[-1]] - t1) > tol:
        raise InvalidArgument(f"snapshots do not include both ends of window {window}")
    return idx


def window_trapz(times, values, window) -> np.ndarray:
    """Trapezoid rule over the snapshots inside ``window``; ``values[i]`` belongs to ``times[i]``."""
    idx = window_indices(times, window)
    return np.trapezoid(np.asarray(values)[idx], np.asarray(times)[idx], axis=0)


def evaluate(obs: Observable, traj: Trajectory) -> np.ndarray:
    idx = window_indices(traj.times, obs.window)
    vals = np.array([spatial_integral(obs, traj.states[i]) for i in idx])
    return np.trapezoid(vals, traj.times[idx], axis=0)


def domain_root_measure(state_or_grid) -> float:
    """``|D|^{1/2}``: ``2 pi`` on the 2D torus, ``sqrt(2 pi)`` on the circle."""
    from .fields import Grid2
    if isinstance(state_or_grid, (SpectralField, Grid2)):
        return TWO_PI
    return float(np.sqrt(TWO_PI))


def lipschitz_estimate(obs: Observable, dim: int = 2) -> float:
    """Bound ``L_G`` with ``|G(u) - G(v)| <= L_G int ||u - v||_{L2} dt``.

    Per channel, ``|int phi (g(u) - g(v))| <= ||phi||_inf Lip(g) |D|^{1/2} ||u - v||``
    by Cauchy-Schwarz; channels combine in the Euclidean norm.
    """
    root = TWO_PI if dim == 2 else float(np.sqrt(TWO_PI))
    per = np.array([ch.weight.sup_norm * ch.g_lipschitz for ch in obs.channels])
    return float(root * np.sqrt(np.sum(per ** 2)))


def check_tiling(observables: Sequence[Observable]) -> np.ndarray:
    """Return the breakpoints ``0 = t_0 < t_1 < ... < t_N`` of contiguous windows."""
    if not observables:
        return np.array([0.0])
    bps = [observables[0].window[0]]
    if abs(bps[0]) > WINDOW_ATOL:
        raise ConfigurationError("the first observation window must start at 0")
    for obs in observables:
        a, b = obs.window
        if abs(a - bps[-1]) > WINDOW_ATOL * max(1.0, b):
            raise ConfigurationError("observation windows must tile [0, T] without gaps or overlaps")
        bps.append(b)
    return np.array(bps)


def snapshot_times(observables: Sequence[Observable], per_window: int = 16,
                   t_end: float | None = None) -> np.ndarray:
    """Uniform snapshots inside each window, shared endpoints merged."""
    bps = check_tiling(observables)
    if t_end is not None and t_end > bps[-1]:
        bps = np.append(bps, t_end)
    if len(bps) == 1:
        return bps
    pieces = [np.linspace(a, b, per_window + 1)[:-1] for a, b in zip(bps[:-1], bps[1:])]
    return np.concatenate(pieces + [bps[-1:]])


# -- noise ---------------------------------------------------------------------

NOISE_KINDS = ("gaussian", "mixture", "compact")


class NoiseModel:
    """Noise density with scale matrix ``Gamma``.

    ``gaussian``: ``N(0, Gamma)``.  ``mixture``: ``p N(0, Gamma) + (1 - p) N(0, kappa^2 Gamma)``,
    the heavy-tail variant.  ``compact``: ``c (1 - |y|_Gamma^2 / a^2)_+``, a
    test fixture that is not strictly positive.
    """

    def __init__(self, gamma, kind: str = "gaussian", p: float = 0.8, kappa: float = 3.0,
                 support: float = 3.0):
        if kind not in NOISE_KINDS:
            raise ConfigurationError(f"unknown noise kind {kind!r}")
        G = np.atleast_2d(np.array(gamma, dtype=np.float64))
        if G.shape[0] != G.shape[1]:
            raise ConfigurationError("Gamma must be square")
        if not np.allclose(G, G.T, rtol=0, atol=1e-14 * np.abs(G).max()):
            raise ConfigurationError("Gamma must be symmetric")
        try:
            chol = cholesky(G, lower=True)
        except np.linalg.LinAlgError as exc:
            raise ConfigurationError("Gamma is not positive definite") from exc
        if kind == "mixture" and not (0 < p < 1 and kappa > 1):
            raise ConfigurationError("mixture needs 0 < p < 1 and kappa > 1")
        if kind == "compact" and not support > 0:
            raise ConfigurationError("compact support radius must be positive")
        G.flags.writeable = False
        chol.flags.writeable = False
        self.gamma = G
        self.chol = chol
        self.kind = kind
        self.p = float(p)
        self.kappa = float(kappa)
        self.support = float(support)
        self._log_norm = -0.5 * self.dim * np.log(TWO_PI) - float(np.sum(np.log(np.diag(chol))))

    @classmethod
    def diagonal(cls, variances, **kw) -> "NoiseModel":
        return cls(np.diag(np.asarray(variances, dtype=np.float64)), **kw)

    @property
    def dim(self) -> int:
        return self.gamma.shape[0]

    @property
    def strictly_positive(self) -> bool:
        return self.kind != "compact"

    def whiten(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        flat = y.reshape(-1, self.dim).T
        z = solve_triangular(self.chol, flat, lower=True)
        return z.T.reshape(y.shape)

    def gamma_norm(self, y) -> np.ndarray | float:
        """``|y|_Gamma = |Gamma^{-1/2} y|`` along the last axis."""
        z = self.whiten(y)
        out = np.sqrt(np.sum(z * z, axis=-1))
        return float(out) if np.ndim(out) == 0 else out

    def log_density(self, y):
        y = np.asarray(y, dtype=np.float64)
        if y.shape[-1] != self.dim:
            raise InvalidArgument(f"expected vectors of length {self.dim}, got {y.shape}")
        z = self.whiten(y)
        q = np.sum(z * z, axis=-1)
        if self.kind == "gaussian":
            out = self._log_norm - 0.5 * q
        elif self.kind == "mixture":
            k2 = self.kappa ** 2
            a = np.log(self.p) + self._log_norm - 0.5 * q
            b = np.log1p(-self.p) + self._log_norm - self.dim * np.log(self.kappa) - 0.5 * q / k2
            out = np.logaddexp(a, b)
        else:
            d, a = self.dim, self.support
            log_ball = 0.5 * d * np.log(np.pi) - np.log(gamma_fn(0.5 * d + 1)) + d * np.log(a)
            log_c = (np.log(d + 2.0) - np.log(2.0) - log_ball
                     - float(np.sum(np.log(np.diag(self.chol)))))
            inside = 1.0 - q / a ** 2
            with np.errstate(divide="ignore"):
                out = np.where(inside > 0, log_c + np.log(np.maximum(inside, 1e-300)), -np.inf)
        return float(out) if np.ndim(out) == 0 else out

    def density(self, y):
        return np.exp(self.log_density(y))

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        n = 1 if size is None else int(size)
        d = self.dim
        if self.kind == "gaussian":
            z = rng.standard_normal((n, d))
        elif self.kind == "mixture":
            z = rng.standard_normal((n, d))
            wide = rng.random(n) >= self.p
            z[wide] *= self.kappa
        else:
            z = np.empty((n, d))
            filled = 0
            while filled < n:
                g = rng.standard_normal((n, d))
                g /= np.linalg.norm(g, axis=1, keepdims=True)
                r = rng.random(n) ** (1.0 / d)
                keep = rng.random(n) < 1.0 - r * r
                cand = (g * r[:, None] * self.support)[keep][: n - filled]
                z[filled:filled + len(cand)] = cand
                filled += len(cand)
        y = z @ self.chol.T
        return y[0] if size is None else y

    def analytic_lipschitz(self) -> float | None:
        """``sup |grad rho|`` in the Gamma metric, known in closed form for the Gaussian."""
        if self.kind != "gaussian":
            return None
        return float(np.exp(self._log_norm - 0.5))

    def describe(self) -> dict:
        out = {"kind": self.kind, "gamma": self.gamma.tolist()}
        if self.kind == "mixture":
            out.update(p=self.p, kappa=self.kappa)
        if self.kind == "compact":
            out.update(support=self.support)
        return out

    @classmethod
    def from_description(cls, desc: dict) -> "NoiseModel":
        kw = {k: desc[k] for k in ("p", "kappa", "support") if k in desc}
        return cls(desc["gamma"], kind=desc.get("kind", "gaussian"), **kw)


def noise_log_density(nm: NoiseModel, y) -> float:
    return nm.log_density(y)


def noise_sample(nm: NoiseModel, seed: int) -> np.ndarray:
    return nm.sample(np.random.default_rng(seed))


@dataclass
class NoiseAudit:
    lipschitz: float
    sup_density: float
    min_tail_ratio: float
    outer_tail_ratio: float
    regularity: bool
    boundedness: bool
    tail: bool
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.regularity and self.boundedness and self.tail

    @property
    def C_rho(self) -> float:
        """Constant in ``Phi >= -C_rho``: ``max(0, log sup rho)``."""
        return max(0.0, float(np.log(self.sup_density)))

    @property
    def B_rho(self) -> float:
        """Constant in ``Phi <= B_rho + |y - L|_Gamma^2 / 2``."""
        if self.min_tail_ratio <= 0:
            return float("inf")
        return max(0.0, -float(np.log(self.min_tail_ratio)))

    def as_dict(self) -> dict:
        return {"L_rho": self.lipschitz, "sup_rho": self.sup_density,
                "min_tail_ratio": self.min_tail_ratio, "outer_tail_ratio": self.outer_tail_ratio,
                "C_rho": self.C_rho, "B_rho": self.B_rho,
                "N1_regularity": self.regularity, "N2_boundedness": self.boundedness,
                "N3_tail": self.tail, "passed": self.passed, **self.details}


def audit_noise(nm: NoiseModel, radius: float = 6.0, resolution: int = 601,
                n_directions: int = 16, seed: int = 0, tail_drop: float = 1e-3) -> NoiseAudit:
    """Sample the density along rays ``y = Gamma^{1/2} r e`` and audit the three conditions.

    Rays are the coordinate axes (both signs) plus ``n_directions`` seeded
    random unit vectors, ``r`` uniform on ``[0, radius]``.  The tail
    condition fails if ``rho exp(|y|^2/2)`` vanishes anywhere or drops below
    ``tail_drop`` times its interior minimum on the outermost 10% of radii.
    """
    d = nm.dim
    rng = np.random.default_rng(seed)
    dirs = np.concatenate([np.eye(d), -np.eye(d), rng.standard_normal((n_directions, d))])
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    r = np.linspace(0.0, radius, resolution)
    z = r[None, :, None] * dirs[:, None, :]
    y = z @ nm.chol.T
    logp = nm.log_density(y)
    rho = np.exp(logp)
    lip = float(np.max(np.abs(np.diff(rho, axis=1)) / np.diff(r)[None, :]))
    sup = float(rho.max())
    log_ratio = logp + 0.5 * r[None, :] ** 2
    ratio = np.exp(log_ratio)
    outer = r >= 0.9 * radius
    min_ratio = float(ratio.min())
    inner_min = float(ratio[:, ~outer].min())
    outer_min = float(ratio[:, outer].min())
    tail = bool(min_ratio > 0 and outer_min >= tail_drop * inner_min)
    details = {"radius": radius, "resolution": resolution, "n_rays": len(dirs)}
    exact = nm.analytic_lipschitz()
    if exact is not None:
        details["L_rho_analytic"] = exact
    return NoiseAudit(lip, sup, min_ratio, outer_min, bool(np.isfinite(lip)),
                      bool(np.isfinite(sup)), tail, details)


# -- measurements ------------------------------------------------------------------

class MeasurementSet:
    """Values ``y_j`` observed on windows ending at ``t_j``, with provenance."""

    def __init__(self, times, values, noise: NoiseModel, seed: int | None = None,
                 truth_id: str = ""):
        times = np.asarray(times, dtype=np.float64).reshape(-1)
        values = np.asarray(values, dtype=np.float64).reshape(len(times), -1) \
            if len(times) else np.zeros((0, noise.dim))
        if np.any(np.diff(times) <= 0):
            raise InvalidArgument("measurement times must be strictly increasing")
        if values.shape[1] != noise.dim:
            raise InvalidArgument("measurement and noise dimensions differ")
        times.flags.writeable = False
        values.flags.writeable = False
        self.times = times
        self.values = values
        self.noise = noise
        self.seed = seed
        self.truth_id = truth_id

    def __len__(self):
        return len(self.times)

    def gamma_norm(self) -> float:
        """``|y|_Gamma = sqrt(sum_j |y_j|_Gamma^2)``."""
        if not len(self):
            return 0.0
        return float(np.sqrt(np.sum(self.noise.gamma_norm(self.values) ** 2)))

    def distance(self, other: "MeasurementSet") -> float:
        return float(np.sqrt(np.sum(self.noise.gamma_norm(self.values - other.values) ** 2)))

    def with_values(self, values, truth_id: str | None = None) -> "MeasurementSet":
        return MeasurementSet(self.times, values, self.noise, self.seed,
                              self.truth_id if truth_id is None else truth_id)

    def truncated(self, k: int) -> "MeasurementSet":
        return MeasurementSet(self.times[:k], self.values[:k], self.noise, self.seed,
                              self.truth_id)


def synthesize_measurements(u_true, forward, observables: Sequence[Observable],
                            nm: NoiseModel, seed: int, per_window: int = 16,
                            truth_id: str = "", add_noise: bool = True) -> MeasurementSet:
    """``y_j = G_j(S(u_true)) + eta_j`` with ``eta_j`` drawn from one seeded stream."""
    bps = check_tiling(observables)
    if any(o.d_obs != nm.dim for o in observables):
        raise ConfigurationError("observable output dimension must match the noise dimension")
    times = snapshot_times(observables, per_window)
    series = [np.concatenate([spatial_integral(o, s) for o in observables])
              for _, s in forward.iterate(u_true, times)]
    series = np.array(series).reshape(len(times), len(observables), -1)
    clean = np.array([window_trapz(times, series[:, j], o.window)
                      for j, o in enumerate(observables)])
    rng = np.random.default_rng(seed)
    noise = nm.sample(rng, len(observables)) if add_noise else np.zeros_like(clean)
    return MeasurementSet(bps[1:], clean + noise, nm, seed, truth_id)
