"""Weighted empirical measures on state space.

Probability measures are represented as particle ensembles with log-space
weights.  Push-forward under a forward operator moves the particles and
leaves the weights untouched.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import BlowUpError, ConfigurationError, DegeneratePosterior, InvalidArgument
from .fields import Grid2, SpectralField, Trajectory, leray_project
from .forward_claw import CellField, CellGrid


class WeightedEnsemble:
    __slots__ = ("members", "log_weights")

    def __init__(self, members, log_weights=None):
        members = tuple(members)
        if not members:
            raise InvalidArgument("an ensemble needs at least one member")
        g = members[0].grid
        if any(m.grid != g for m in members):
            raise InvalidArgument("ensemble members live on different grids")
        if log_weights is None:
            log_weights = np.full(len(members), -np.log(len(members)))
        lw = np.array(log_weights, dtype=np.float64)
        if lw.shape != (len(members),):
            raise InvalidArgument("one log-weight per member required")
        lw.flags.writeable = False
        self.members = members
        self.log_weights = lw

    def __len__(self):
        return len(self.members)

    @property
    def grid(self):
        return self.members[0].grid

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def is_normalized(self, tol: float = 1e-12) -> bool:
        return abs(float(np.sum(self.weights)) - 1.0) <= tol

    def subset(self, indices) -> "WeightedEnsemble":
        idx = list(indices)
        return WeightedEnsemble([self.members[i] for i in idx], self.log_weights[idx])

    def with_members(self, members) -> "WeightedEnsemble":
        return WeightedEnsemble(members, self.log_weights)


def normalize(ens: WeightedEnsemble) -> WeightedEnsemble:
    return WeightedEnsemble(ens.members, normalize_log_weights(ens.log_weights))


def normalize_log_weights(log_weights: np.ndarray) -> np.ndarray:
    lw = np.asarray(log_weights, dtype=np.float64)
    if not np.any(np.isfinite(lw)):
        raise DegeneratePosterior("every log-weight is -inf")
    return lw - logsumexp(lw)


def ess(ens: WeightedEnsemble) -> float:
    """Effective sample size ``1 / sum w_i^2`` of the normalized weights."""
    w = np.exp(normalize_log_weights(ens.log_weights))
    return float(1.0 / np.sum(w * w))


def moment(ens: WeightedEnsemble, p: int = 1) -> float:
    """``(sum_i w_i ||u_i||^p)^{1/p}``."""
    if p not in (1, 2):
        raise InvalidArgument("only p = 1 or 2 is supported")
    norms = np.array([m.l2_norm() for m in ens.members])
    return float(np.sum(ens.weights * norms ** p) ** (1.0 / p))


# -- priors --------------------------------------------------------------------

@dataclass(frozen=True)
class PriorSpec:
    """Random Fourier series prior with coefficient stddev ``sigma |k|^-alpha``."""

    alpha: float
    k_max: int
    radius: float
    sigma: float = 1.0
    divergence_free: bool = True
    model: str = "ns2d"
    n_cells: int = 512

    def __post_init__(self):
        if not self.alpha > 1:
            raise ConfigurationError(f"decay exponent must exceed 1, got {self.alpha}")
        if not self.radius > 0:
            raise ConfigurationError(f"support radius must be positive, got {self.radius}")
        if self.k_max < 1:
            raise ConfigurationError("k_max must be >= 1")
        if self.model not in ("ns2d", "burgers1d"):
            raise ConfigurationError(f"unknown model {self.model!r}")
        if self.model == "burgers1d" and self.n_cells < 2 * self.k_max + 2:
            raise ConfigurationError("n_cells too small for k_max")

    def as_dict(self) -> dict:
        return asdict(self)

    @property
    def grid(self):
        if self.model == "ns2d":
            n = max(2, self.k_max + (self.k_max % 2))
            return Grid2(n)
        return CellGrid(self.n_cells)


def member_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream per (seed, member index)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def _clip_to_radius(field, radius):
    norm = field.l2_norm()
    if norm <= radius:
        return field
    field = field * (radius / norm)
    while field.l2_norm() > radius:
        field = field * (1.0 - 2.0 ** -52)
    return field


def _sample_ns(spec: PriorSpec, rng: np.random.Generator) -> SpectralField:
    grid = spec.grid
    KX, KY = grid.wavenumbers()
    kinf = np.maximum(np.abs(KX), np.abs(KY))
    kmag = np.sqrt(KX * KX + KY * KY)
    band = (kinf >= 1) & (kinf <= spec.k_max)
    std = np.where(band, spec.sigma * np.where(band, kmag, 1.0) ** (-spec.alpha), 0.0)
    z = (rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)) / np.sqrt(2.0)
    z = z * std
    c = (z + np.conj(z[:, ::-1, ::-1])) / np.sqrt(2.0)
    u = SpectralField(grid, c)
    if spec.divergence_free:
        u = leray_project(u)
    return _clip_to_radius(u, spec.radius)


def _sample_burgers(spec: PriorSpec, rng: np.random.Generator) -> CellField:
    grid = spec.grid
    k = np.arange(1, spec.k_max + 1)
    std = spec.sigma * k.astype(float) ** (-spec.alpha)
    c = (rng.standard_normal(len(k)) + 1j * rng.standard_normal(len(k))) / np.sqrt(2.0) * std
    x = grid.centers()
    u = 2.0 * np.real(np.exp(1j * np.outer(x, k)) @ c)
    return _clip_to_radius(CellField(grid, u), spec.radius)


def sample_member(spec: PriorSpec, seed: int, index: int):
    rng = member_rng(seed, index)
    if spec.model == "ns2d":
        return _sample_ns(spec, rng)
    return _sample_burgers(spec, rng)


def sample_prior(spec: PriorSpec, n: int, seed: int, threads: int = 1) -> WeightedEnsemble:
    """``n`` iid prior draws with uniform weights; independent of ``threads``."""
    if n < 1:
        raise InvalidArgument("sample size must be >= 1")
    idx = range(n)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            members = list(pool.map(lambda i: sample_member(spec, seed, i), idx))
    else:
        members = [sample_member(spec, seed, i) for i in idx]
    return WeightedEnsemble(members)


# -- push-forward ------------------------------------------------------------------

def _member_iterator(forward, member, times):
    if hasattr(forward, "iterate"):
        return forward.iterate(member, times)
    return ((float(t), forward(member, t)) for t in times)


def propagate(members: Sequence, forward, times: Sequence[float], threads: int = 1):
    """Advance all members in lockstep, yielding ``(t, states)`` per snapshot.

    Each member is stepped by its own iterator, so results do not depend on
    the worker count or on which other members are present.
    """
    times = [float(t) for t in times]
    iters = [_member_iterator(forward, m, times) for m in members]

    def advance(i):
        try:
            return next(iters[i])[1]
        except BlowUpError as exc:
            exc.member = i
            raise

    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        for t in times:
            if pool is None:
                states = [advance(i) for i in range(len(iters))]
            else:
                states = list(pool.map(advance, range(len(iters))))
            yield t, states
    finally:
        if pool is not None:
            pool.shutdown()


def pushforward(ens: WeightedEnsemble, forward, t: float, threads: int = 1) -> WeightedEnsemble:
    """Members mapped by ``S_t``; log-weights carried over unchanged."""
    if t < 0:
        raise InvalidArgument("push-forward time must be nonnegative")
    times = [0.0, t] if t > 0 else [0.0]
    last = None
    for _, states in propagate(ens.members, forward, times, threads):
        last = states
    return WeightedEnsemble(last, ens.log_weights)


class EnsembleTrajectory:
    """Per-member trajectories on shared snapshot times, with one weight vector."""

    def __init__(self, times, states_by_time, log_weights):
        self.times = np.asarray(times, dtype=np.float64)
        self.states = [tuple(s) for s in states_by_time]
        if len(self.states) != len(self.times):
            raise InvalidArgument("one state list per snapshot time required")
        self.log_weights = np.array(log_weights, dtype=np.float64)
        self.log_weights.flags.writeable = False

    @classmethod
    def from_forward(cls, ens: WeightedEnsemble, forward, times, threads: int = 1):
        collected = [states for _, states in propagate(ens.members, forward, times, threads)]
        return cls(times, collected, ens.log_weights)

    @property
    def n_members(self) -> int:
        return len(self.log_weights)

    def member(self, i: int) -> Trajectory:
        return Trajectory(self.times, [s[i] for s in self.states])

    def index_of(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise InvalidArgument(f"time {t} is not a stored snapshot")
        return i

    def at(self, t: float, log_weights=None) -> WeightedEnsemble:
        lw = self.log_weights if log_weights is None else log_weights
        return WeightedEnsemble(self.states[self.index_of(t)], lw)
