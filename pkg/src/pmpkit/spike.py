"""Spike variations: Q_rho sets, spiked controls, variation vectors."""

from __future__ import annotations

import math

import numpy as np

from .bv import CellFunction, TimeGrid
from .errors import BoundNotAchieved, RangeError
from .ode import ControlSignal, duhamel_linear, linearize, sample_dynamics, solve_forward

MAX_RETRIES = 4
DENSE_FACTOR = 10
MAX_PIECES = 2_000_000


class SpikeSet:
    """Finite union of disjoint intervals ``[a_i, b_i]`` of total length ``rho*T``."""

    __slots__ = ("rho", "T", "intervals")

    def __init__(self, rho, T, intervals):
        iv = np.asarray(intervals, dtype=np.float64).reshape(-1, 2)
        if np.any(iv[:, 1] < iv[:, 0]) or (iv.size and (iv[0, 0] < 0 or iv[-1, 1] > T)):
            raise RangeError("spike intervals must be ordered and lie in [0, T]")
        if np.any(iv[1:, 0] < iv[:-1, 1]):
            raise RangeError("spike intervals must be disjoint")
        self.rho = float(rho)
        self.T = float(T)
        self.intervals = iv

    @classmethod
    def empty(cls, T):
        return cls(0.0, T, np.zeros((0, 2)))

    def measure(self):
        return math.fsum(self.intervals[:, 1] - self.intervals[:, 0])

    def endpoints(self):
        return self.intervals.ravel()

    def contains(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.intervals.size == 0:
            return np.zeros(t.shape, dtype=bool)
        k = np.searchsorted(self.intervals[:, 0], t, side="right") - 1
        ok = k >= 0
        kk = np.clip(k, 0, None)
        return ok & (t <= self.intervals[kk, 1]) & (t >= self.intervals[kk, 0])


def _as_cells(h, grid):
    """Interpret ``h`` as a cell function (arrays are piecewise constant per cell)."""
    if isinstance(h, CellFunction):
        return h if h.grid == grid else h.resample(grid)
    if callable(h):
        return CellFunction.from_function(grid, h)
    arr = np.asarray(h, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.shape[0] != grid.N:
        raise ValueError(f"expected {grid.N} cell values for h, got {arr.shape[0]}")
    return CellFunction.constant(grid, np.zeros(arr.shape[1])).map(lambda v: arr.copy())


def _flatten(hc):
    shp = hc.shape
    if len(shp) == 0:
        return hc.map(lambda v: v[:, None])
    return hc


def deviation_sup(h, Q, grid, factor=DENSE_FACTOR):
    """Dense estimate of ``sup_t |int_0^t (1 - 1_Q / rho) h|_inf``."""
    hc = _flatten(_as_cells(h, grid))
    fine = grid.refine(factor).union(Q.endpoints())
    hf = hc.resample(fine)
    inside = Q.contains(fine.mids)
    w = np.where(inside, 1.0 - 1.0 / Q.rho, 1.0)[:, None]
    first, second = hf.half_integrals()
    run = np.cumsum((first + second) * w, axis=0)
    mid_vals = np.vstack([np.zeros((1, run.shape[1])), run[:-1]]) + first * w
    return float(max(np.max(np.abs(run)), np.max(np.abs(mid_vals))))


def _select(work, rho, T):
    starts = work.nodes[:-1]
    ends = starts + rho * work.h
    lengths = ends - starts
    # absorb rounding in the longest interval so the measure is rho*T to working precision
    deficit = rho * T - math.fsum(lengths)
    k = int(np.argmax(lengths))
    ends[k] = ends[k] + deficit
    return SpikeSet(rho, T, np.column_stack([starts, ends]))


def build_qrho(h, rho, grid):
    """Constructive ``Q_rho`` with ``lambda(Q) = rho T`` and the averaging bound.

    Each cell is split until ``int_cell |h|_inf <= rho^2 / (2 (rho + 1))``;
    then the leading fraction ``rho`` of every working cell is selected.  The
    bound ``sup_t |int_0^t (1 - 1_Q/rho) h|_inf <= rho`` is verified on a
    10x dense grid; on failure the working grid is halved, up to 4 times.

    Raises
    ------
    BoundNotAchieved
        If the bound still fails after the last refinement.
    """
    if not 0.0 < rho < 1.0:
        raise RangeError("rho must lie in (0, 1)")
    hc = _flatten(_as_cells(h, grid))
    thr = rho * rho / (2.0 * (rho + 1.0))
    peak = np.max(np.abs(np.stack([hc.left, hc.mid, hc.right])), axis=(0, 2))
    mass = peak * grid.h / thr
    if not np.all(np.isfinite(mass)) or np.sum(mass) > MAX_PIECES:
        raise BoundNotAchieved(f"h is too large to equidistribute at rho={rho} on this grid")
    pieces = np.maximum(1, np.ceil(mass)).astype(int)
    pts = [grid.nodes[:-1]]
    for k in np.nonzero(pieces > 1)[0]:
        frac = np.arange(1, pieces[k]) / pieces[k]
        pts.append(grid.nodes[k] + grid.h[k] * frac)
    work = grid.union(np.concatenate(pts))
    for attempt in range(MAX_RETRIES + 1):
        Q = _select(work, rho, grid.T)
        dev = deviation_sup(hc, Q, work)
        if dev <= rho:
            return Q
        if attempt < MAX_RETRIES:
            work = work.refine(2)
    raise BoundNotAchieved(f"deviation {dev:.3g} exceeds rho={rho} after {MAX_RETRIES} refinements")


def spike_control(u, u_prime, Q):
    """``u'`` on ``Q`` and ``u`` elsewhere, exact on a grid containing ``Q``'s endpoints."""
    grid = u.grid.union(u_prime.grid)
    if Q.intervals.size == 0:
        return u.resample(grid)
    grid = grid.union(Q.endpoints())
    a = u.resample(grid).values
    b = u_prime.resample(grid).values
    inside = Q.contains(grid.mids)
    return ControlSignal(grid, np.where(inside[:, None], b, a))


def _common(u, u_prime, grid):
    g = u.grid.union(u_prime.grid)
    return g if grid is None else grid.union(g)


def perturbation_source(problem, u, u_prime, grid=None):
    """``h(t) = f(q(t,u), u'(t), t) - f(q(t,u), u(t), t)`` and the trajectory used."""
    g = _common(u, u_prime, grid)
    traj = solve_forward(problem, u, g)
    f_u = sample_dynamics(problem, traj, u)
    f_up = sample_dynamics(problem, traj, u_prime)
    h = CellFunction(g, f_up.left - f_u.left, f_up.mid - f_u.mid, f_up.right - f_u.right)
    return h, traj


def variation_vector(problem, u, u_prime, grid=None):
    """Solve ``w' = d_q f(q(.,u), u, .) w + h_{u,u'}``, ``w(0) = 0``."""
    h, traj = perturbation_source(problem, u, u_prime, grid)
    A = linearize(problem, traj, u)
    return duhamel_linear(A, h, np.zeros(problem.n), "forward", traj.grid)


def differentiability_probe(problem, u, u_prime, rhos, grid=None):
    """Table of ``(rho, |(q(.,u_rho) - q(.,u))/rho - w|_inf)``.

    Both trajectories are solved on the grid refined by ``Q_rho``; the error
    is measured at the nodes of the base grid.
    """
    h, traj = perturbation_source(problem, u, u_prime, grid)
    base = traj.grid
    A = linearize(problem, traj, u)
    w = duhamel_linear(A, h, np.zeros(problem.n), "forward", base)
    rows = []
    for rho in rhos:
        Q = build_qrho(h, rho, base)
        u_rho = spike_control(u.resample(base), u_prime.resample(base), Q)
        fine = u_rho.grid
        q_rho = solve_forward(problem, u_rho, fine).sample(base)
        q_ref = solve_forward(problem, u, fine).sample(base)
        err = float(np.max(np.abs((q_rho - q_ref) / rho - w.values)))
        rows.append((float(rho), err))
    return rows


def probe_to_csv(rows):
    from . import csvio

    return csvio.dumps(["rho", "err"], rows)


__all__ = [
    "SpikeSet",
    "TimeGrid",
    "build_qrho",
    "deviation_sup",
    "differentiability_probe",
    "perturbation_source",
    "probe_to_csv",
    "spike_control",
    "variation_vector",
]
