"""Spectral Galerkin solver for 2D incompressible Navier-Stokes.

The semidiscrete system for the coefficients ``u_k``, ``|k|_inf <= N``, is

    d/dt u_k = -nu |k|^2 u_k - [Leray P_N div(u (x) u)]_k

The nonlinear term is evaluated pseudo-spectrally on an ``M x M`` grid with
``M >= 3N + 1`` (alias free on the retained band) and stepped with RK4 in
integrating-factor form, so the viscous decay is integrated exactly.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np
from scipy import fft as sfft

from .errors import BlowUpError, ConfigurationError, InvalidArgument
from .fields import (
    Grid2, SpectralField, Trajectory, centred_to_rfft, gradient_norm, l2_norm,
    rfft_to_centred, sobolev_norm, to_physical,
)

CFL_SAFETY = 0.5
ENERGY_TOL = 1e-8
COERCIVITY_TOL = 0.01


def _steps_for(t: float, dt: float) -> int:
    q = t / dt
    n = int(round(q))
    if abs(q - n) > 1e-9 * max(1.0, abs(q)):
        raise InvalidArgument(f"time {t} is not a multiple of dt={dt}")
    return n


@dataclass(frozen=True)
class NSConfig:
    viscosity: float
    grid: Grid2
    dt: float
    t_end: float

    def __post_init__(self):
        if not self.viscosity > 0:
            raise ConfigurationError(f"viscosity must be positive, got {self.viscosity}")
        if not self.dt > 0 or not self.t_end > 0:
            raise ConfigurationError("dt and t_end must be positive")
        q = self.t_end / self.dt
        if abs(q - round(q)) > 1e-9 * max(1.0, q):
            raise ConfigurationError(f"t_end/dt = {q} is not an integer")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def cfl_limit(self, u_max: float) -> float:
        if u_max <= 0:
            return np.inf
        return CFL_SAFETY / (self.grid.n_modes * u_max)

    def check_stability(self, field: SpectralField):
        """Raise if ``dt`` exceeds the explicit advection ceiling for ``field``."""
        u_max = float(np.abs(to_physical(field.resized(self.grid), 4 * self.grid.n_modes)).max())
        limit = self.cfl_limit(u_max)
        if self.dt > limit:
            raise ConfigurationError(
                f"dt={self.dt} exceeds stability ceiling {limit:.4g} "
                f"(N={self.grid.n_modes}, max|u|={u_max:.4g})")


class NSSolver:
    """Immutable stepping kernel for one :class:`NSConfig`."""

    def __init__(self, cfg: NSConfig):
        self.cfg = cfg
        n = cfg.grid.n_modes
        self.n_modes = n
        self.m = sfft.next_fast_len(3 * n + 1, real=True)
        # compact band layout: rows kx = 0..N, -N..-1; columns ky = 0..N
        kx = np.r_[np.arange(n + 1), np.arange(-n, 0)].astype(np.float64)
        ky = np.arange(n + 1, dtype=np.float64)
        KX, KY = np.meshgrid(kx, ky, indexing="ij")
        k2 = KX * KX + KY * KY
        self.KX, self.KY = KX, KY
        self.inv_k2 = np.where(k2 > 0, 1.0 / np.where(k2 > 0, k2, 1.0), 0.0)
        self.E = np.exp(-cfg.viscosity * k2 * cfg.dt / 2.0)
        self.E2 = self.E * self.E

    # -- layout conversions ----------------------------------------------------

    def to_internal(self, field: SpectralField) -> np.ndarray:
        n = self.n_modes
        return centred_to_rfft(field.resized(self.cfg.grid).coeffs, n, 2 * n + 1)

    def to_field(self, uh: np.ndarray) -> SpectralField:
        return SpectralField(self.cfg.grid, rfft_to_centred(uh, self.n_modes), True)

    def _to_grid(self, uh: np.ndarray) -> np.ndarray:
        n, m = self.n_modes, self.m
        padded = np.zeros(uh.shape[:-2] + (m, n + 1), dtype=np.complex128)
        padded[..., :n + 1, :] = uh[..., :n + 1, :]
        padded[..., m - n:, :] = uh[..., n + 1:, :]
        a = sfft.ifft(padded, axis=-2, norm="forward")
        return sfft.irfft(a, n=m, axis=-1, norm="forward")

    def _from_grid(self, values: np.ndarray) -> np.ndarray:
        n, m = self.n_modes, self.m
        b = sfft.rfft(values, axis=-1, norm="forward")[..., :n + 1]
        b = sfft.fft(b, axis=-2, norm="forward")
        return np.concatenate([b[..., :n + 1, :], b[..., m - n:, :]], axis=-2)

    # -- right-hand side -------------------------------------------------------

    def nonlinear(self, uh: np.ndarray) -> np.ndarray:
        """``-Leray P_N div(u (x) u)`` in compact band layout."""
        u = self._to_grid(uh)
        prod = np.empty((3,) + u.shape[1:])
        np.multiply(u[0], u[0], out=prod[0])
        np.multiply(u[0], u[1], out=prod[1])
        np.multiply(u[1], u[1], out=prod[2])
        ph = self._from_grid(prod)
        KX, KY = self.KX, self.KY
        n1 = 1j * (KX * ph[0] + KY * ph[1])
        n2 = 1j * (KX * ph[1] + KY * ph[2])
        kdotn = (KX * n1 + KY * n2) * self.inv_k2
        out = np.empty((2,) + n1.shape, dtype=np.complex128)
        np.subtract(KX * kdotn, n1, out=out[0])
        np.subtract(KY * kdotn, n2, out=out[1])
        # keep the ky = 0 column exactly Hermitian so snapshots round-trip bitwise
        n = self.n_modes
        out[:, n + 1:, 0] = np.conj(out[:, n:0:-1, 0])
        return out

    def step(self, uh: np.ndarray) -> np.ndarray:
        dt = self.cfg.dt
        E, E2 = self.E, self.E2
        k1 = self.nonlinear(uh)
        k2 = self.nonlinear(E * (uh + 0.5 * dt * k1))
        k3 = self.nonlinear(E * uh + 0.5 * dt * k2)
        k4 = self.nonlinear(E2 * uh + dt * E * k3)
        return E2 * uh + (dt / 6.0) * (E2 * k1 + 2.0 * E * (k2 + k3) + k4)

    # -- driving ---------------------------------------------------------------

    def iterate(self, initial: SpectralField, times: Sequence[float], check_cfl=True):
        """Yield ``(t, state)`` at each requested snapshot time, in order."""
        cfg = self.cfg
        steps = [_steps_for(t, cfg.dt) for t in times]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise InvalidArgument("snapshot times must be strictly increasing")
        if steps and (steps[0] < 0 or steps[-1] > cfg.n_steps):
            raise InvalidArgument(f"snapshot times must lie in [0, {cfg.t_end}]")
        start = initial.resized(cfg.grid)
        if check_cfl:
            cfg.check_stability(start)
        uh = self.to_internal(start)
        current = 0
        for t, target in zip(times, steps):
            while current < target:
                uh = self.step(uh)
                current += 1
                if not np.isfinite(uh).all():
                    raise BlowUpError("non-finite coefficients", step=current,
                                      time=current * cfg.dt)
            yield float(t), (start if target == 0 else self.to_field(uh))

    def solve(self, initial: SpectralField, times: Sequence[float]) -> Trajectory:
        times = list(times)
        states = [s for _, s in self.iterate(initial, times)]
        return Trajectory(times, states)


@functools.lru_cache(maxsize=32)
def solver_for(cfg: NSConfig) -> NSSolver:
    return NSSolver(cfg)


def ns_step(state: SpectralField, cfg: NSConfig) -> SpectralField:
    solver = solver_for(cfg)
    uh = solver.step(solver.to_internal(state))
    if not np.isfinite(uh).all():
        raise BlowUpError("non-finite coefficients", step=1, time=cfg.dt)
    return solver.to_field(uh)


def ns_solve(u0: SpectralField, cfg: NSConfig, snapshot_times: Sequence[float]) -> Trajectory:
    """Solve from ``P_N u0`` and return states at ``snapshot_times``."""
    return solver_for(cfg).solve(u0, snapshot_times)


def uniform_times(t_end: float, n_intervals: int) -> np.ndarray:
    return np.linspace(0.0, t_end, n_intervals + 1)


class NSForward:
    """Forward-operator handle for ensemble and filtering code.

    Wraps an :class:`NSConfig`; ``solve`` and ``iterate`` accept initial data
    on any grid and apply ``P_N`` first.
    """

    model = "ns2d"

    def __init__(self, cfg: NSConfig, check_cfl: bool = True):
        self.cfg = cfg
        self.check_cfl = check_cfl
        self._solver = solver_for(cfg)

    @property
    def dt(self):
        return self.cfg.dt

    @property
    def t_end(self):
        return self.cfg.t_end

    @property
    def resolution(self):
        return self.cfg.grid.n_modes

    def iterate(self, initial, times):
        return self._solver.iterate(initial, times, check_cfl=self.check_cfl)

    def solve(self, initial, times) -> Trajectory:
        return Trajectory(list(times), [s for _, s in self.iterate(initial, times)])

    def describe(self) -> dict:
        return {"model": self.model, "nu": self.cfg.viscosity, "N": self.cfg.grid.n_modes,
                "dt": self.cfg.dt, "T": self.cfg.t_end}


# -- property verifiers ----------------------------------------------------------

@dataclass
class PropertyReport:
    property_id: str
    lhs: float
    rhs: float
    tolerance: float
    passed: bool
    details: dict = dc_field(default_factory=dict)

    @property
    def margin(self) -> float:
        return self.rhs * (1.0 + self.tolerance) - self.lhs

    def as_dict(self) -> dict:
        return {"property": self.property_id, "lhs": self.lhs, "rhs": self.rhs,
                "tolerance": self.tolerance, "margin": self.margin, "passed": self.passed,
                **self.details}


def verify_energy(traj: Trajectory, tol: float = ENERGY_TOL) -> PropertyReport:
    """Energy bound: ``max_t ||u(t)|| <= ||u(0)||``."""
    norms = np.array([l2_norm(s) for s in traj.states])
    lhs, rhs = float(norms.max()), float(norms[0])
    return PropertyReport("Delta.1", lhs, rhs, tol, lhs <= rhs * (1.0 + tol),
                          {"final_ratio": float(norms[-1] / rhs) if rhs > 0 else 0.0})


def enstrophy_integral(traj: Trajectory) -> float:
    g2 = np.array([gradient_norm(s) ** 2 for s in traj.states])
    return float(np.trapezoid(g2, traj.times)) if len(traj) > 1 else 0.0


def verify_coercivity(traj: Trajectory, viscosity: float,
                      tol: float = COERCIVITY_TOL, min_snapshots: int = 64) -> PropertyReport:
    """Coercivity: ``int_0^T ||grad u||^2 dt <= ||u(0)||^2 / nu`` (trapezoid)."""
    if len(traj) < min_snapshots:
        raise InvalidArgument(
            f"coercivity quadrature needs >= {min_snapshots} snapshots, got {len(traj)}")
    lhs = enstrophy_integral(traj)
    rhs = l2_norm(traj.initial) ** 2 / viscosity
    return PropertyReport("Delta.2", lhs, rhs, tol, lhs <= rhs * (1.0 + tol))


def verify_time_regularity(traj: Trajectory, L: float = 2.0) -> PropertyReport:
    """Largest ``||u(t) - u(s)||_{H^-L} / |t - s|`` over snapshot pairs."""
    if len(traj) < 3:
        raise InvalidArgument("time-regularity check needs at least 3 snapshots")
    coeffs = np.stack([s.coeffs for s in traj.states])
    KX, KY = traj.grid.wavenumbers()
    w = np.sqrt((1.0 + KX * KX + KY * KY) ** (-float(L)))
    weighted = (coeffs * w).reshape(len(traj), -1)
    best = 0.0
    t = traj.times
    for i in range(len(traj) - 1):
        diff = weighted[i + 1:] - weighted[i]
        norms = 2.0 * np.pi * np.sqrt(np.sum(np.abs(diff) ** 2, axis=1))
        best = max(best, float(np.max(norms / (t[i + 1:] - t[i]))))
    return PropertyReport("Delta.3", best, np.inf, 0.0, bool(np.isfinite(best)),
                          {"L": float(L), "h_minus_L_initial": sobolev_norm(traj.initial, -L)})


def time_regularity_uniformity(reports: Sequence[PropertyReport], factor: float = 2.0) -> dict:
    """Check that the Delta.3 constants over a refinement sweep agree within ``factor``."""
    values = np.array([r.lhs for r in reports])
    positive = values[values > 0]
    spread = float(positive.max() / positive.min()) if len(positive) else 1.0
    return {"constants": values.tolist(), "spread": spread,
            "passed": bool(np.all(np.isfinite(values)) and spread <= factor)}
