"""Bayesian filtering on weighted ensembles.

The smoothing posterior reweights prior members by ``exp(-sum_j Phi_j)`` in
one shot.  The recursive filter alternates a correction (reweighting with
the newest measurement) and a prediction (push-forward of the members over
the next window); the members themselves are never resampled.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import DegeneratePosterior, InvalidArgument
from .observe import (MeasurementSet, NoiseAudit, NoiseModel, Observable, check_tiling,
                      snapshot_times, spatial_integral, window_indices, window_trapz)
from .probability import WeightedEnsemble, normalize_log_weights, propagate

SNAPSHOT_TIME_TOL = 1e-9


def log_likelihood(nm: NoiseModel, L_val, y):
    """``Phi = -log rho(y - L)``; vectorized over leading axes of ``L_val``."""
    return -nm.log_density(np.asarray(y) - np.asarray(L_val))


# -- observation operator over an ensemble ---------------------------------------------

def _spatial_row(observables, state):
    return np.stack([spatial_integral(o, state) for o in observables])


def observe_members(members: Sequence, forward, observables: Sequence[Observable],
                    per_window: int = 16, threads: int = 1, on_snapshot: Callable | None = None):
    """Propagate ``members`` once over all windows and return ``(times, L)``.

    ``L[i, j]`` is ``G_j`` applied to member ``i``.  ``on_snapshot(t, states)``
    is called at every snapshot, which lets callers collect diagnostics
    without holding the full ensemble trajectory.
    """
    times = snapshot_times(observables, per_window)
    if not observables:
        return times, np.zeros((len(members), 0, 0))
    series = []
    for t, states in propagate(members, forward, times, threads):
        series.append([_spatial_row(observables, s) for s in states])
        if on_snapshot is not None:
            on_snapshot(t, states)
    series = np.array(series)  # (time, member, obs, d)
    L = np.stack([window_trapz(times, series[:, :, j], o.window)
                  for j, o in enumerate(observables)], axis=1)
    return times, L


# -- ledger ----------------------------------------------------------------------

@dataclass
class LikelihoodLedger:
    """Per-member, per-stage ``Phi`` values and running log-normalizers."""

    prior_log_weights: np.ndarray
    phi: np.ndarray
    log_Z: np.ndarray
    certificates: dict = field(default_factory=dict)

    @classmethod
    def build(cls, prior_log_weights, phi) -> "LikelihoodLedger":
        lp = normalize_log_weights(prior_log_weights)
        phi = np.asarray(phi, dtype=np.float64).reshape(len(lp), -1)
        cum = np.concatenate([np.zeros((len(lp), 1)), np.cumsum(phi, axis=1)], axis=1)
        log_Z = np.array([logsumexp(lp - cum[:, k]) for k in range(cum.shape[1])])
        return cls(lp, phi, log_Z)

    @property
    def n_stages(self) -> int:
        return self.phi.shape[1]

    def smoothing_log_weights(self, k: int) -> np.ndarray:
        if not 0 <= k <= self.n_stages:
            raise InvalidArgument(f"stage {k} outside 0..{self.n_stages}")
        lw = self.prior_log_weights - np.sum(self.phi[:, :k], axis=1)
        if not np.any(np.isfinite(lw)):
            raise DegeneratePosterior(f"all members have zero likelihood at stage {k}")
        return normalize_log_weights(lw)

    def as_dict(self) -> dict:
        return {"phi": self.phi.tolist(), "log_Z": self.log_Z.tolist(),
                "certificates": self.certificates}


def recursive_log_weights(prior_log_weights, phi) -> list:
    """Stage weights by repeated correction: ``w_j ∝ w_{j-1} exp(-Phi_j)``."""
    lw = normalize_log_weights(prior_log_weights)
    out = [lw]
    for j in range(np.shape(phi)[1]):
        nxt = lw - phi[:, j]
        if not np.any(np.isfinite(nxt)):
            raise DegeneratePosterior(f"all members have zero likelihood at stage {j + 1}")
        lw = normalize_log_weights(nxt)
        out.append(lw)
    return out


def phi_matrix(nm: NoiseModel, L: np.ndarray, ms: MeasurementSet) -> np.ndarray:
    """``Phi[i, j] = -log rho(y_j - L[i, j])``."""
    k = len(ms)
    if k == 0:
        return np.zeros((L.shape[0], 0))
    return log_likelihood(nm, L[:, :k], ms.values[None, :k])


def _check_schedule(observables, ms: MeasurementSet):
    bps = check_tiling(observables)
    if len(ms) > len(observables):
        raise InvalidArgument("more measurements than observables")
    if len(ms) and not np.allclose(ms.times, bps[1:len(ms) + 1], rtol=0, atol=SNAPSHOT_TIME_TOL):
        raise InvalidArgument("measurement times do not match the observation windows")
    return bps


def smoothing_posterior(prior: WeightedEnsemble, forward, observables: Sequence[Observable],
                        ms: MeasurementSet, k: int | None = None, per_window: int = 16,
                        threads: int = 1, L: np.ndarray | None = None):
    """One-shot posterior over initial data given ``y_1..y_k``.

    Returns ``(posterior, ledger)``.  Members are the prior members.
    ``L`` may be supplied to skip the forward solves.
    """
    _check_schedule(observables, ms)
    k = len(ms) if k is None else int(k)
    if not 0 <= k <= len(ms):
        raise InvalidArgument(f"k = {k} outside 0..{len(ms)}")
    if k == 0:
        ledger = LikelihoodLedger.build(prior.log_weights, np.zeros((len(prior), 0)))
        return prior, ledger
    if L is None:
        _, L = observe_members(prior.members, forward, observables[:k], per_window, threads)
    phi = phi_matrix(ms.noise, L, ms.truncated(k))
    ledger = LikelihoodLedger.build(prior.log_weights, phi)
    return WeightedEnsemble(prior.members, ledger.smoothing_log_weights(k)), ledger


# -- filtering distribution --------------------------------------------------------

class FilteringDistribution:
    """Piecewise-in-time weighted ensemble.

    On ``[t_j, t_{j+1})`` the weights are the stage-``j`` weights (measurements
    ``y_1..y_j``); the last stage persists to the horizon.  Members are the
    prior members propagated, indexed identically at every time.
    """

    def __init__(self, breakpoints, horizon, times, stage_log_weights, states=None,
                 ledger: LikelihoodLedger | None = None, L=None, dt: float | None = None):
        self.breakpoints = np.asarray(breakpoints, dtype=np.float64)
        self.horizon = float(horizon)
        self.times = np.asarray(times, dtype=np.float64)
        self.stage_log_weights = [np.asarray(w, dtype=np.float64) for w in stage_log_weights]
        if len(self.stage_log_weights) != len(self.breakpoints):
            raise InvalidArgument("one weight vector per stage required")
        if states is not None and len(states) != len(self.times):
            raise InvalidArgument("one member list per snapshot required")
        self.states = states
        self.ledger = ledger
        self.L = L
        self.dt = dt

    @property
    def n_stages(self) -> int:
        return len(self.breakpoints) - 1

    @property
    def n_members(self) -> int:
        return len(self.stage_log_weights[0])

    @property
    def interval_breakpoints(self) -> np.ndarray:
        if self.horizon > self.breakpoints[-1] + SNAPSHOT_TIME_TOL:
            return np.append(self.breakpoints, self.horizon)
        return self.breakpoints

    def stage_index(self, t: float) -> int:
        """Right-continuous stage lookup."""
        if t < -SNAPSHOT_TIME_TOL or t > self.horizon + SNAPSHOT_TIME_TOL:
            raise InvalidArgument(f"t = {t} outside [0, {self.horizon}]")
        return int(np.searchsorted(self.breakpoints[1:], t + SNAPSHOT_TIME_TOL, side="right"))

    def snapshot_index(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        limit = 5.0 * self.dt if self.dt else SNAPSHOT_TIME_TOL
        if abs(self.times[i] - t) > limit + SNAPSHOT_TIME_TOL:
            raise InvalidArgument(f"no stored snapshot near t = {t}")
        return i

    def members_at(self, t: float):
        if self.states is None:
            raise InvalidArgument("this filtering distribution keeps weights only")
        return self.states[self.snapshot_index(t)]

    def weights_at(self, t: float) -> np.ndarray:
        return self.stage_log_weights[self.stage_index(t)]

    def at(self, t: float) -> WeightedEnsemble:
        return WeightedEnsemble(self.members_at(t), self.weights_at(t))

    def segment(self, j: int):
        """Stage-``j`` segment as an :class:`EnsembleTrajectory` on ``[t_j, t_{j+1}]``."""
        from .probability import EnsembleTrajectory
        bps = self.interval_breakpoints
        if not 0 <= j < max(1, len(bps) - 1):
            raise InvalidArgument(f"segment {j} does not exist")
        a = bps[j]
        b = bps[j + 1] if j + 1 < len(bps) else bps[j]
        idx = np.nonzero((self.times >= a - SNAPSHOT_TIME_TOL) & (self.times <= b + SNAPSHOT_TIME_TOL))[0]
        return EnsembleTrajectory(self.times[idx], [self.states[i] for i in idx],
                                  self.stage_log_weights[j])


def filter_recursive(prior: WeightedEnsemble, forward, observables: Sequence[Observable],
                     ms: MeasurementSet, per_window: int = 16, threads: int = 1,
                     t_end: float | None = None, store: bool = True) -> FilteringDistribution:
    """Prediction-correction recursion over the observation windows.

    Each window is integrated by restarting the forward solver from the
    member states at the window start, so stage boundaries must fall on
    solver steps.  With no measurements the result is the push-forward of
    the prior over ``[0, t_end]``.
    """
    bps = _check_schedule(observables, ms)
    n_meas = len(ms)
    bps = bps[:n_meas + 1]
    horizon = float(t_end if t_end is not None else
                    (bps[-1] if n_meas else getattr(forward, "t_end", bps[-1])))
    if horizon < bps[-1] - SNAPSHOT_TIME_TOL:
        raise InvalidArgument("horizon ends before the last measurement")
    obs_used = list(observables[:n_meas])
    if horizon > bps[-1] + SNAPSHOT_TIME_TOL:
        tail = Observable((bps[-1], horizon))
        schedule = obs_used + [tail]
    else:
        schedule = obs_used
    times = snapshot_times(schedule, per_window) if schedule else np.array([0.0])

    lw = normalize_log_weights(prior.log_weights)
    stage_weights = [lw]
    states_all = [] if store else None
    L = np.zeros((len(prior), n_meas, ms.noise.dim))
    current = list(prior.members)
    if not schedule and store:
        states_all.append(tuple(m.resized(forward_grid(forward, m)) for m in current))

    for j, obs in enumerate(schedule):
        idx = window_indices(times, obs.window)
        local = times[idx] - times[idx[0]]
        rows = []
        last = None
        for k, (_, states) in enumerate(propagate(current, forward, local, threads)):
            if j < n_meas:
                rows.append([spatial_integral(obs, s) for s in states])
            if store and (j == 0 or k > 0):
                states_all.append(tuple(states))
            last = states
        current = last
        if j < n_meas:
            # correction with y_{j+1} once the window has been integrated
            L[:, j] = np.trapezoid(np.array(rows), times[idx], axis=0)
            phi = log_likelihood(ms.noise, L[:, j], ms.values[j])
            nxt = lw - phi
            if not np.any(np.isfinite(nxt)):
                raise DegeneratePosterior(f"all members have zero likelihood at stage {j + 1}")
            lw = normalize_log_weights(nxt)
            stage_weights.append(lw)

    phi_all = phi_matrix(ms.noise, L, ms)
    ledger = LikelihoodLedger.build(prior.log_weights, phi_all)
    return FilteringDistribution(bps, horizon, times, stage_weights, states_all, ledger, L,
                                 getattr(forward, "dt", None))


def forward_grid(forward, member):
    cfg = getattr(forward, "cfg", None)
    if cfg is None:
        return member.grid
    return getattr(cfg, "grid")


def filtering_from_weights(breakpoints, horizon, times, prior_log_weights, phi, states=None,
                           dt=None) -> FilteringDistribution:
    """Assemble a filtering distribution from precomputed ``Phi`` values."""
    stages = recursive_log_weights(prior_log_weights, phi)
    ledger = LikelihoodLedger.build(prior_log_weights, phi)
    return FilteringDistribution(breakpoints, horizon, times, stages, states, ledger, None, dt)


# -- certificates ------------------------------------------------------------------

@dataclass
class DensityCertificate:
    rows: list
    passed: bool

    def as_dict(self) -> dict:
        return {"passed": self.passed, "stages": self.rows}


def posterior_density_bounds(ledger: LikelihoodLedger, L: np.ndarray, ms: MeasurementSet,
                             audit: NoiseAudit) -> DensityCertificate:
    """Check the normalizer lower bound and the density upper bound per stage.

    With ``Phi <= B_rho + |y_j|^2 + |L_j|^2`` and ``Phi >= -C_rho``, for ``k``
    measurements:

        log Z_k >= -k B_rho - |y_{1:k}|^2 - int sum_j |L_j|^2 dmu
        log (dmu^y / dmu) <= k (B_rho + C_rho) + |y_{1:k}|^2 + int sum_j |L_j|^2 dmu

    with all norms in the Gamma metric and ``mu`` the empirical prior.
    """
    nm = ms.noise
    p = np.exp(ledger.prior_log_weights)
    rows = []
    ok = True
    for k in range(ledger.n_stages + 1):
        y2 = float(np.sum(nm.gamma_norm(ms.values[:k]) ** 2)) if k else 0.0
        L2 = float(p @ np.sum(nm.gamma_norm(L[:, :k]) ** 2, axis=1)) if k else 0.0
        lower = -k * audit.B_rho - y2 - L2
        lw = ledger.smoothing_log_weights(k)
        max_ratio = float(np.max(lw - ledger.prior_log_weights))
        upper = k * (audit.B_rho + audit.C_rho) + y2 + L2
        z_ok = bool(ledger.log_Z[k] >= lower)
        d_ok = bool(max_ratio <= upper + 1e-12)
        ok = ok and z_ok and d_ok
        rows.append({"stage": k, "log_Z": float(ledger.log_Z[k]), "log_Z_lower": lower,
                     "log_Z_slack": float(ledger.log_Z[k] - lower),
                     "max_log_density": max_ratio, "log_density_upper": upper,
                     "density_slack": float(upper - max_ratio), "passed": z_ok and d_ok})
    ledger.certificates = {"density_bounds": rows}
    return DensityCertificate(rows, ok)


def expectation(fd: FilteringDistribution, t: float, functional: Callable) -> float:
    """Weighted mean of ``functional`` over the active stage at time ``t``."""
    if t < -SNAPSHOT_TIME_TOL or t > fd.horizon + SNAPSHOT_TIME_TOL:
        raise InvalidArgument(f"t = {t} outside [0, {fd.horizon}]")
    members = fd.members_at(t)
    w = np.exp(fd.weights_at(t))
    vals = np.array([float(functional(u)) for u in members])
    return float(w @ vals)
