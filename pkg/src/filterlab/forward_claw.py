"""Finite-volume solver for the periodic 1D Burgers equation.

Semi-discrete conservative form on ``n`` equal cells of width ``2 pi / n``,

    d/dt u_i + (F(u_i, u_{i+1}) - F(u_{i-1}, u_i)) / dx = 0,

advanced with SSP-RK2.  Two-point fluxes: Rusanov (local Lax-Friedrichs)
and the exact Godunov flux for ``f(u) = u^2 / 2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import BlowUpError, ConfigurationError, InvalidArgument
from .fields import Trajectory
from .forward_ns import PropertyReport, _steps_for

TWO_PI = 2.0 * np.pi
CFL_MAX = 0.9


def burgers_flux(u):
    return 0.5 * u * u


def burgers_speed(u):
    return u


def rusanov(a, b):
    alpha = np.maximum(np.abs(a), np.abs(b))
    return 0.5 * (burgers_flux(a) + burgers_flux(b)) - 0.5 * alpha * (b - a)


def godunov(a, b):
    fa, fb = burgers_flux(a), burgers_flux(b)
    rising = np.where((a <= 0) & (b >= 0), 0.0, np.minimum(fa, fb))
    return np.where(a <= b, rising, np.maximum(fa, fb))


FLUXES = {"rusanov": rusanov, "godunov": godunov}


@dataclass(frozen=True)
class CellGrid:
    n_cells: int

    def __post_init__(self):
        if int(self.n_cells) != self.n_cells or self.n_cells < 2:
            raise InvalidArgument(f"need at least 2 cells, got {self.n_cells}")

    @property
    def delta(self) -> float:
        return TWO_PI / self.n_cells

    def centers(self) -> np.ndarray:
        return (np.arange(self.n_cells) + 0.5) * self.delta


@dataclass(frozen=True, eq=False)
class CellField:
    grid: CellGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.shape != (self.grid.n_cells,):
            raise InvalidArgument(f"expected {self.grid.n_cells} cell values, got {v.shape}")
        if not np.isfinite(v).all():
            raise InvalidArgument("cell values must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: CellGrid, func: Callable) -> "CellField":
        """Midpoint sampling ``u_i = func(x_i)``."""
        return cls(grid, func(grid.centers()))

    def __add__(self, other):
        return CellField(self.grid, self.values + other.values)

    def __sub__(self, other):
        if other.grid != self.grid:
            raise InvalidArgument("grid mismatch")
        return CellField(self.grid, self.values - other.values)

    def __mul__(self, scalar):
        return CellField(self.grid, self.values * float(scalar))

    __rmul__ = __mul__

    def l2_norm(self) -> float:
        return float(np.sqrt(self.grid.delta * np.sum(self.values ** 2)))

    def embedding(self) -> np.ndarray:
        return np.sqrt(self.grid.delta) * self.values

    def resized(self, grid: CellGrid) -> "CellField":
        """Trigonometric interpolation onto another set of cell midpoints.

        Exact for data band-limited below both Nyquist wavenumbers; the
        Nyquist modes themselves are dropped.
        """
        if grid == self.grid:
            return self
        n_old, n_new = self.grid.n_cells, grid.n_cells
        keep = (min(n_old, n_new) + 1) // 2
        k = np.arange(keep)
        c = np.fft.rfft(self.values)[:keep] / n_old * np.exp(-0.5j * k * self.grid.delta)
        out = np.zeros(n_new // 2 + 1, dtype=np.complex128)
        out[:keep] = c * np.exp(0.5j * k * grid.delta)
        return CellField(grid, np.fft.irfft(out * n_new, n=n_new))


def cell_distance(u: CellField, v: CellField) -> float:
    if u.grid != v.grid:
        g = u.grid if u.grid.n_cells >= v.grid.n_cells else v.grid
        u, v = u.resized(g), v.resized(g)
    return float(np.sqrt(u.grid.delta * np.sum((u.values - v.values) ** 2)))


@dataclass(frozen=True)
class FVConfig:
    n_cells: int
    dt: float
    t_end: float
    flux: str = "rusanov"
    cfl_max: float = CFL_MAX

    def __post_init__(self):
        if self.flux not in FLUXES:
            raise ConfigurationError(f"unknown flux {self.flux!r}")
        if not self.dt > 0 or not self.t_end > 0:
            raise ConfigurationError("dt and t_end must be positive")
        q = self.t_end / self.dt
        if abs(q - round(q)) > 1e-9 * max(1.0, q):
            raise ConfigurationError(f"t_end/dt = {q} is not an integer")

    @property
    def grid(self) -> CellGrid:
        return CellGrid(self.n_cells)

    @property
    def delta(self) -> float:
        return TWO_PI / self.n_cells

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def courant(self, values: np.ndarray) -> float:
        return self.dt * float(np.abs(burgers_speed(values)).max()) / self.delta


def fv_rhs(values: np.ndarray, cfg: FVConfig) -> np.ndarray:
    F = FLUXES[cfg.flux](values, np.roll(values, -1))
    return -(F - np.roll(F, 1)) / cfg.delta


def _advance(values: np.ndarray, cfg: FVConfig, step_index: int) -> np.ndarray:
    c = cfg.courant(values)
    if c > cfg.cfl_max:
        raise ConfigurationError(
            f"CFL {c:.3f} exceeds {cfg.cfl_max} at step {step_index}")
    u1 = values + cfg.dt * fv_rhs(values, cfg)
    out = 0.5 * values + 0.5 * (u1 + cfg.dt * fv_rhs(u1, cfg))
    if not np.isfinite(out).all():
        raise BlowUpError("non-finite cell values", step=step_index + 1,
                          time=(step_index + 1) * cfg.dt)
    return out


def fv_step(state: CellField, cfg: FVConfig) -> CellField:
    if state.grid.n_cells != cfg.n_cells:
        raise InvalidArgument("state and config disagree on n_cells")
    return CellField(state.grid, _advance(state.values, cfg, 0))


class ClawForward:
    """Forward-operator handle for the finite-volume Burgers model."""

    model = "burgers1d"

    def __init__(self, cfg: FVConfig):
        self.cfg = cfg

    @property
    def dt(self):
        return self.cfg.dt

    @property
    def t_end(self):
        return self.cfg.t_end

    @property
    def resolution(self):
        return self.cfg.n_cells

    def iterate(self, initial: CellField, times: Sequence[float]):
        cfg = self.cfg
        steps = [_steps_for(t, cfg.dt) for t in times]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise InvalidArgument("snapshot times must be strictly increasing")
        if steps and (steps[0] < 0 or steps[-1] > cfg.n_steps):
            raise InvalidArgument(f"snapshot times must lie in [0, {cfg.t_end}]")
        start = initial.resized(cfg.grid)
        u = start.values
        current = 0
        for t, target in zip(times, steps):
            while current < target:
                u = _advance(u, cfg, current)
                current += 1
            yield float(t), (start if target == 0 else CellField(cfg.grid, u))

    def solve(self, initial: CellField, times: Sequence[float]) -> Trajectory:
        times = list(times)
        return Trajectory(times, [s for _, s in self.iterate(initial, times)])

    def describe(self) -> dict:
        c = self.cfg
        return {"model": self.model, "n_cells": c.n_cells, "dt": c.dt, "T": c.t_end,
                "flux": c.flux}


def fv_solve(u0: CellField, cfg: FVConfig, snapshot_times: Sequence[float]) -> Trajectory:
    return ClawForward(cfg).solve(u0, snapshot_times)


# -- verifiers -------------------------------------------------------------------

def discrete_entropy(state: CellField) -> float:
    """``dx * sum_i u_i^2 / 2`` for the entropy ``eta(u) = u^2 / 2``."""
    return 0.5 * state.grid.delta * float(np.sum(state.values ** 2))


def verify_l2_bound(traj: Trajectory, tol: float = 1e-10) -> PropertyReport:
    e = np.array([np.sum(s.values ** 2) for s in traj.states]) * traj.grid.delta
    ratio = float(e.max() / e[0]) if e[0] > 0 else 0.0
    return PropertyReport("FV.L2", ratio, 1.0, tol, ratio <= 1.0 + tol,
                          {"final_ratio": float(e[-1] / e[0]) if e[0] > 0 else 0.0})


def weak_bv_integral(traj: Trajectory, s: float = 2.0) -> float:
    """``int_0^T sum_i |u_{i+1} - u_i|^s dt``; equals the weak-BV lhs divided by dx."""
    if s < 2:
        raise InvalidArgument("weak BV exponent must be >= 2")
    vals = np.array([np.sum(np.abs(np.roll(st.values, -1) - st.values) ** s)
                     for st in traj.states])
    return float(np.trapezoid(vals, traj.times)) if len(traj) > 1 else 0.0


def verify_weak_bv(values_by_resolution: dict, factor: float = 2.0, s: float = 2.0) -> PropertyReport:
    """Uniformity of ``lhs / dx`` across a refinement sweep.

    ``values_by_resolution`` maps ``n_cells`` to a trajectory.
    """
    ratios = {n: weak_bv_integral(tr, s) for n, tr in sorted(values_by_resolution.items())}
    v = np.array(list(ratios.values()))
    positive = v[v > 0]
    spread = float(positive.max() / positive.min()) if len(positive) else 1.0
    return PropertyReport("FV.weakBV", spread, factor, 0.0,
                          bool(np.isfinite(v).all() and spread <= factor),
                          {"s": s, "ratios": {str(k): r for k, r in ratios.items()}})


@dataclass
class FluxConsistency:
    exact_diagonal: bool
    fitted_constant: float
    max_speed: float

    @property
    def passed(self) -> bool:
        return self.exact_diagonal and np.isfinite(self.fitted_constant)


def flux_consistency_check(flux, u_range=(-2.0, 2.0), n_samples: int = 201) -> FluxConsistency:
    """Fit the smallest C with ``|F(a, b) - f(a)| <= C |a - b|`` on a sample grid."""
    if isinstance(flux, str):
        flux = FLUXES[flux]
    u = np.linspace(u_range[0], u_range[1], n_samples)
    A, B = np.meshgrid(u, u, indexing="ij")
    resid = np.abs(flux(A, B) - burgers_flux(A))
    gap = np.abs(A - B)
    off = gap > 0
    diag = np.array_equal(flux(u, u), burgers_flux(u))
    C = float(np.max(resid[off] / gap[off]))
    return FluxConsistency(diag, C, float(np.abs(burgers_speed(u)).max()))


def shock_front(state: CellField, near: float, level: float = 0.5) -> float:
    """Position of the downward crossing of ``level`` closest to ``near``."""
    x = state.grid.centers()
    u = state.values
    nxt = np.roll(u, -1)
    idx = np.nonzero((u >= level) & (nxt < level))[0]
    if len(idx) == 0:
        raise InvalidArgument("no downward crossing found")
    dx = state.grid.delta
    pos = x[idx] + dx * (u[idx] - level) / (u[idx] - nxt[idx])
    return float(pos[np.argmin(np.abs(pos - near))])
