"""Wasserstein-1 distances between weighted ensembles, the time-integrated
metric ``d_T``, Kantorovich lower bounds, and second-order structure functions.

W1 between finite ensembles is a transportation LP.  It is solved exactly
with the HiGHS dual simplex (or the Hungarian algorithm for uniform square
problems) and returned together with its dual certificate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog
from scipy.sparse import coo_matrix
from scipy.spatial.distance import cdist
from scipy.special import j1

from .errors import InvalidArgument
from .fields import Grid2, SpectralField, TWO_PI
from .forward_claw import CellField
from .probability import WeightedEnsemble, normalize_log_weights

NORMALIZATION_TOL = 1e-10
MAX_ENSEMBLE = 512


@dataclass
class TransportPlan:
    coupling: np.ndarray
    cost: float
    source: np.ndarray
    target: np.ndarray
    dual_gap: float = 0.0
    method: str = "highs-ds"

    def marginal_residual(self) -> float:
        r = np.abs(self.coupling.sum(axis=1) - self.source).max()
        c = np.abs(self.coupling.sum(axis=0) - self.target).max()
        return float(max(r, c))

    def stats(self) -> dict:
        return {"cost": self.cost, "n": int(self.coupling.shape[0]),
                "m": int(self.coupling.shape[1]), "support": int(np.count_nonzero(self.coupling)),
                "marginal_residual": self.marginal_residual(), "dual_gap": self.dual_gap,
                "method": self.method}


# -- embeddings and costs ---------------------------------------------------------

def _common_grid(a, b):
    if isinstance(a, Grid2):
        return a if a.n_modes >= b.n_modes else b
    return a if a.n_cells >= b.n_cells else b


def embed(members: Sequence, grid=None) -> np.ndarray:
    """Stack member embeddings (Euclidean norm = L2 norm) on ``grid``."""
    if grid is None:
        grid = members[0].grid
    return np.stack([m.resized(grid).embedding() for m in members])


def cost_matrix(A: Sequence, B: Sequence) -> np.ndarray:
    """``c_ij = ||a_i - b_j||_{L2}``; members on different grids are compared
    on the finer one."""
    ga, gb = A[0].grid, B[0].grid
    if type(ga) is not type(gb):
        raise InvalidArgument("cannot compare fields of different types")
    g = _common_grid(ga, gb)
    return cdist(embed(A, g), embed(B, g))


def _check_normalized(w, name):
    if abs(float(np.sum(w)) - 1.0) > NORMALIZATION_TOL or np.any(w < 0):
        raise InvalidArgument(f"{name} weights are not normalized")


def transport(cost: np.ndarray, a: np.ndarray, b: np.ndarray) -> TransportPlan:
    """Exact optimal transport for a dense cost matrix and marginals ``a``, ``b``."""
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != (n,) or b.shape != (m,):
        raise InvalidArgument("marginals do not match the cost matrix")
    if max(n, m) > MAX_ENSEMBLE:
        raise InvalidArgument(f"ensembles are capped at {MAX_ENSEMBLE} members")
    if n == 1 or m == 1:
        plan = np.outer(a, b)
        return TransportPlan(plan, float(np.sum(plan * cost)), a, b, 0.0, "trivial")
    if n == m and np.all(a == a[0]) and np.all(b == b[0]) and abs(a[0] - b[0]) <= 1e-15:
        rows, cols = linear_sum_assignment(cost)
        plan = np.zeros((n, m))
        plan[rows, cols] = a[rows]
        return TransportPlan(plan, float(np.sum(cost[rows, cols]) * a[0]), a, b, 0.0,
                             "assignment")
    # equality constraints: row sums then column sums of the flattened plan
    idx = np.arange(n * m)
    rows = np.concatenate([idx // m, n + idx % m])
    A_eq = coo_matrix((np.ones(2 * n * m), (rows, np.concatenate([idx, idx]))),
                      shape=(n + m, n * m)).tocsr()
    res = linprog(cost.ravel(), A_eq=A_eq, b_eq=np.concatenate([a, b]), bounds=(0, None),
                  method="highs-ds",
                  options={"primal_feasibility_tolerance": 1e-10,
                           "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    plan = np.maximum(res.x.reshape(n, m), 0.0)
    primal = float(np.sum(plan * cost))
    duals = res.eqlin.marginals
    gap = primal - float(duals[:n] @ a + duals[n:] @ b)
    return TransportPlan(plan, primal, a, b, gap, "highs-ds")


def w1(A: WeightedEnsemble, B: WeightedEnsemble, cost: np.ndarray | None = None):
    """Exact ``W_1(A, B)`` and an optimal plan."""
    if type(A.grid) is not type(B.grid):
        raise InvalidArgument("ensembles hold different field types")
    wa, wb = A.weights, B.weights
    _check_normalized(wa, "source")
    _check_normalized(wb, "target")
    if cost is None:
        cost = cost_matrix(A.members, B.members)
    plan = transport(cost, wa, wb)
    return plan.cost, plan


def kantorovich_lower_bound(A: WeightedEnsemble, B: WeightedEnsemble, anchors=None) -> float:
    """``max_a |int ||u - a|| dA - int ||u - a|| dB|`` over anchor fields ``a``.

    Each probe ``u -> ||u - a||`` is 1-Lipschitz, so the result never exceeds
    ``W_1``.  Default anchors: every member of both ensembles.
    """
    if anchors is None:
        anchors = list(A.members) + list(B.members)
    if len(anchors) == 0:
        return 0.0
    da = cost_matrix(A.members, anchors)
    db = cost_matrix(B.members, anchors)
    diff = A.weights @ da - B.weights @ db
    return float(np.max(np.abs(diff)))


# -- time-integrated metric --------------------------------------------------------

def _stage_of(t, breakpoints, left=False):
    inner = np.asarray(breakpoints)[1:]
    side = "left" if left else "right"
    return int(np.searchsorted(inner, t + 1e-12 * max(1.0, abs(t)), side=side))


def quadrature_nodes(breakpoints, per_stage: int = 16) -> np.ndarray:
    bps = np.asarray(breakpoints, dtype=np.float64)
    if len(bps) < 2:
        return bps.copy()
    pieces = [np.linspace(a, b, per_stage + 1)[:-1] for a, b in zip(bps[:-1], bps[1:])]
    return np.concatenate(pieces + [bps[-1:]])


@dataclass
class DTResult:
    value: float
    sup: float
    times: np.ndarray
    left: np.ndarray
    right: np.ndarray

    def rows(self):
        """``(t, W1)`` rows; breakpoints appear twice (left and right limits)."""
        out = []
        for t, l, r in zip(self.times, self.left, self.right):
            if l != r and not np.isnan(l):
                out.append((float(t), float(l)))
            out.append((float(t), float(r)))
        return out


def piecewise_trapz(times, breakpoints, n_stages: int, value):
    """Trapezoid rule for an integrand whose weights switch at breakpoints.

    ``value(i, stage)`` gives the integrand at node ``i`` under stage
    ``stage`` weights.  The integrand is right-continuous, so on the interval
    ``[t_j, t_{j+1}]`` stage ``j`` is used at both ends (the right end being a
    left limit).  Returns ``(integral, right_values, left_values)``; the
    left values are NaN except at interval ends.
    """
    times = np.asarray(times, dtype=np.float64)
    bps = np.asarray(breakpoints, dtype=np.float64)
    right = np.array([value(i, min(_stage_of(t, bps), n_stages - 1))
                      for i, t in enumerate(times)], dtype=np.float64)
    left = np.full(right.shape, np.nan)
    total = np.zeros(right.shape[1:])
    for j in range(min(len(bps) - 1, n_stages)):
        a, b = bps[j], bps[j + 1]
        tol = 1e-9 * max(1.0, abs(b))
        idx = np.nonzero((times >= a - tol) & (times <= b + tol))[0]
        if len(idx) < 2:
            continue
        vals = np.array([value(i, j) for i in idx], dtype=np.float64)
        left[idx[-1]] = vals[-1]
        total = total + np.trapezoid(vals, times[idx], axis=0)
    return total, right, left


def d_T_from_costs(times, breakpoints, costs, stage_weights_a, stage_weights_b) -> DTResult:
    """``int_0^T W_1 dt`` from per-node cost matrices and per-stage weights.

    At a breakpoint ``t_j`` the integrand takes stage ``j`` weights from the
    right and stage ``j - 1`` weights from the left.
    """
    wa = [np.exp(normalize_log_weights(lw)) for lw in stage_weights_a]
    wb = [np.exp(normalize_log_weights(lw)) for lw in stage_weights_b]
    if len(wa) != len(wb):
        raise InvalidArgument("filtering distributions have different stage counts")
    cache = {}

    def value(i, stage):
        key = (i, stage)
        if key not in cache:
            cache[key] = transport(costs[i], wa[stage], wb[stage]).cost
        return cache[key]

    total, right, left = piecewise_trapz(times, breakpoints, len(wa), value)
    finite_left = left[~np.isnan(left)]
    sup = float(max(right.max(), finite_left.max() if len(finite_left) else 0.0))
    return DTResult(float(total), sup, np.asarray(times, dtype=np.float64), left, right)


def d_T(F, G, nodes=None) -> DTResult:
    """``d_T`` between two filtering distributions on shared snapshot nodes."""
    if abs(F.horizon - G.horizon) > 1e-12:
        raise InvalidArgument("filtering distributions have different horizons")
    if F.breakpoints.shape != G.breakpoints.shape or \
            not np.allclose(F.breakpoints, G.breakpoints, rtol=0, atol=1e-12):
        raise InvalidArgument("filtering distributions have different breakpoints")
    if nodes is None:
        nodes = np.intersect1d(np.round(F.times, 12), np.round(G.times, 12))
    costs = [cost_matrix(F.members_at(t), G.members_at(t)) for t in nodes]
    return d_T_from_costs(nodes, F.interval_breakpoints, costs, F.stage_log_weights, G.stage_log_weights)


# -- structure functions ----------------------------------------------------------

def ball_multiplier(kmag, r, dim: int = 2):
    """``avg_{|h| <= r} |e^{ik.h} - 1|^2`` as a function of ``|k| r``.

    2D disk: ``2 (1 - 2 J_1(x) / x)``; 1D interval: ``2 (1 - sin(x) / x)``.
    """
    x = np.asarray(kmag, dtype=np.float64) * r
    out = np.zeros_like(x)
    nz = x > 0
    small = nz & (x < 1e-4)
    big = nz & ~small
    if dim == 2:
        out[big] = 2.0 * (1.0 - 2.0 * j1(x[big]) / x[big])
        out[small] = x[small] ** 2 / 4.0 - x[small] ** 4 / 96.0
    else:
        out[big] = 2.0 * (1.0 - np.sin(x[big]) / x[big])
        out[small] = x[small] ** 2 / 3.0 - x[small] ** 4 / 60.0
    return out


def ball_multiplier_quadrature(k, r, n_radial: int = 32, n_angular: int = 64) -> float:
    """Disk average of ``|e^{ik.h} - 1|^2`` by Gauss-Legendre x uniform-angle quadrature."""
    x, w = np.polynomial.legendre.leggauss(n_radial)
    rho = 0.5 * r * (x + 1.0)
    wr = 0.5 * r * w * rho
    theta = TWO_PI * np.arange(n_angular) / n_angular
    hx = rho[:, None] * np.cos(theta)[None, :]
    hy = rho[:, None] * np.sin(theta)[None, :]
    f = 2.0 - 2.0 * np.cos(k[0] * hx + k[1] * hy)
    integral = float(np.sum(wr[:, None] * f) * TWO_PI / n_angular)
    return integral / (np.pi * r * r)


def _spectrum(state):
    """``(|k|, (2 pi)^dim |u_k|^2)`` summed over components, and the ball dimension."""
    if isinstance(state, SpectralField):
        KX, KY = state.grid.wavenumbers()
        power = TWO_PI ** 2 * np.sum(np.abs(state.coeffs) ** 2, axis=0)
        return np.sqrt(KX * KX + KY * KY).ravel(), power.ravel(), 2
    if isinstance(state, CellField):
        n = state.grid.n_cells
        c = np.fft.fft(state.values) / n
        k = np.abs(np.fft.fftfreq(n, 1.0 / n))
        return k, TWO_PI * np.abs(c) ** 2, 1
    raise InvalidArgument(f"unsupported state type {type(state).__name__}")


def s2_squared(state, radii) -> np.ndarray:
    """``S_2(u; r)^2 = int_D avg_{B_r} |u(x + h) - u(x)|^2 dh dx`` for each radius."""
    radii = np.asarray(radii, dtype=np.float64)
    if np.any(radii <= 0) or np.any(radii > np.pi):
        raise InvalidArgument("radii must lie in (0, pi]")
    kmag, power, dim = _spectrum(state)
    keep = power > 0
    kmag, power = kmag[keep], power[keep]
    return np.array([float(np.sum(ball_multiplier(kmag, r, dim) * power)) for r in radii])


def s2_bruteforce(field: SpectralField, r: float, n_radial: int = 24, n_angular: int = 48,
                  m_quad: int | None = None) -> float:
    """Shift-average oracle: translate the field by quadrature shifts ``h`` and
    integrate ``|u(x + h) - u(x)|^2`` on a physical grid."""
    from .fields import to_physical
    m = m_quad or field.grid.default_quadrature()
    base = to_physical(field, m)
    KX, KY = field.grid.wavenumbers()
    x, w = np.polynomial.legendre.leggauss(n_radial)
    rho = 0.5 * r * (x + 1.0)
    wr = 0.5 * r * w * rho
    cell = (TWO_PI / m) ** 2
    total = 0.0
    for a in range(n_angular):
        th = TWO_PI * a / n_angular
        for rr, ww in zip(rho, wr):
            phase = np.exp(1j * (KX * rr * np.cos(th) + KY * rr * np.sin(th)))
            shifted = SpectralField(field.grid, field.coeffs * phase)
            diff = to_physical(shifted, m) - base
            total += ww * cell * float(np.sum(diff * diff))
    total *= TWO_PI / n_angular
    return float(np.sqrt(total / (np.pi * r * r)))


@dataclass
class StructureReport:
    radii: np.ndarray
    s2t: np.ndarray
    bound: np.ndarray
    label: str = ""
    series: dict = field(default_factory=dict)

    @property
    def violations(self) -> int:
        return int(np.sum(self.s2t > self.bound))

    @property
    def monotone(self) -> bool:
        return bool(np.all(np.diff(self.s2t) >= -1e-14 * max(1.0, float(self.s2t.max()))))

    def rows(self):
        return [(self.label, float(r), float(s), float(b))
                for r, s, b in zip(self.radii, self.s2t, self.bound)]


class StructureAccumulator:
    """Streaming ``S_2^T``: feed ``(t, states, weights)`` snapshots in time order."""

    def __init__(self, radii):
        self.radii = np.asarray(radii, dtype=np.float64)
        self.times = []
        self.values = []

    def add(self, t: float, states: Sequence, weights: np.ndarray):
        per = np.array([s2_squared(s, self.radii) for s in states])
        self.times.append(float(t))
        self.values.append(np.asarray(weights) @ per)

    def result(self) -> np.ndarray:
        if len(self.times) < 2:
            return np.zeros_like(self.radii)
        return np.sqrt(np.trapezoid(np.array(self.values), np.array(self.times), axis=0))


def structure_bound(radii, viscosity: float, second_moment: float, scale: float = 1.0):
    """``scale * r / sqrt(2 nu) * ||u0||_{L2(mu)}``."""
    return scale * np.asarray(radii, dtype=np.float64) / np.sqrt(2.0 * viscosity) * second_moment


def structure_function(traj_ens, radii, viscosity: float | None = None,
                       second_moment: float | None = None, scale: float = 1.0,
                       label: str = "") -> StructureReport:
    """``S_2^T`` of an :class:`EnsembleTrajectory` with its (fixed) weights.

    The bound uses the initial ensemble's second moment unless one is given.
    """
    acc = StructureAccumulator(radii)
    w = np.exp(normalize_log_weights(traj_ens.log_weights))
    for t, states in zip(traj_ens.times, traj_ens.states):
        acc.add(t, states, w)
    s2t = acc.result()
    if viscosity is None:
        bound = np.full_like(s2t, np.inf)
    else:
        if second_moment is None:
            norms = np.array([s.l2_norm() for s in traj_ens.states[0]])
            second_moment = float(np.sqrt(w @ norms ** 2))
        bound = structure_bound(radii, viscosity, second_moment, scale)
    return StructureReport(np.asarray(radii, dtype=np.float64), s2t, bound, label)


def lipschitz_fit(xs, ys):
    """Least-squares slope through the origin and the largest pointwise ratio."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.size == 0:
        raise InvalidArgument("lipschitz_fit needs at least one point")
    if xs.shape != ys.shape:
        raise InvalidArgument("xs and ys differ in shape")
    if np.any(xs <= 0):
        raise InvalidArgument("xs must be positive")
    slope = float(np.sum(xs * ys) / np.sum(xs * xs))
    return slope, float(np.max(ys / xs))
