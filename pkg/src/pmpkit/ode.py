"""Forward Cauchy solves, state-transition matrices and Duhamel formulas."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import csvio, kernels
from .bv import CellFunction, TimeGrid
from .errors import GridMismatch, RangeError, SingularTransition

BLOWUP_BOUND = 1e8
COND_LIMIT = 1e12


# --------------------------------------------------------------------------
# Controls and trajectories
# --------------------------------------------------------------------------


class ControlSignal:
    """Piecewise-constant control, ``values[k]`` on ``[t_k, t_{k+1})``."""

    __slots__ = ("grid", "values")

    def __init__(self, grid, values):
        values = np.array(values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[0] != grid.N:
            raise GridMismatch(f"expected {grid.N} cell values, got {values.shape[0]}")
        if not np.all(np.isfinite(values)):
            raise ValueError("control values must be finite")
        values.setflags(write=False)
        self.grid = grid
        self.values = values

    @classmethod
    def constant(cls, grid, value):
        value = np.atleast_1d(np.asarray(value, dtype=np.float64))
        return cls(grid, np.tile(value, (grid.N, 1)))

    @classmethod
    def from_function(cls, grid, fn):
        """Sample ``fn`` at the left end of each cell."""
        vals = np.asarray(fn(grid.nodes[:-1]), dtype=np.float64)
        return cls(grid, vals)

    @property
    def m(self):
        return self.values.shape[1]

    def linf(self):
        return float(np.max(np.abs(self.values)))

    def resample(self, fine):
        """Same signal on a grid refining this one."""
        if fine == self.grid:
            return self
        return ControlSignal(fine, self.values[fine.parent_cells(self.grid)])

    def at(self, t):
        return self.values[self.grid.locate(t)]

    def l1_norm(self):
        """``int ||u(t)||_inf dt``."""
        return float(math.fsum(self.grid.h * np.max(np.abs(self.values), axis=1)))

    def l1_distance(self, other):
        g = self.grid.union(other.grid)
        d = self.resample(g).values - other.resample(g).values
        return float(math.fsum(g.h * np.max(np.abs(d), axis=1)))

    def coalesce(self):
        """Merge adjacent cells carrying identical values."""
        keep = np.ones(self.grid.N, dtype=bool)
        keep[1:] = np.any(self.values[1:] != self.values[:-1], axis=1)
        nodes = np.append(self.grid.nodes[:-1][keep], self.grid.T)
        return ControlSignal(TimeGrid(nodes), self.values[keep])

    def to_csv(self):
        header = ["t"] + [f"u{i + 1}" for i in range(self.m)]
        return csvio.dumps(header, np.column_stack([self.grid.nodes[:-1], self.values]))

    @classmethod
    def from_csv(cls, text, T):
        """Rows give cell start times; the horizon ``T`` closes the last cell."""
        header, data = csvio.loads(text)
        if not header or header[0] != "t":
            raise ValueError("control CSV must start with a 't' column")
        nodes = np.append(data[:, 0], float(T))
        return cls(TimeGrid(nodes), data[:, 1:])


class Trajectory:
    """Node states plus optional cell-midpoint states."""

    __slots__ = ("grid", "values", "mids")

    def __init__(self, grid, values, mids=None):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[0] != grid.N + 1:
            raise GridMismatch(f"expected {grid.N + 1} node states, got {values.shape[0]}")
        self.grid = grid
        self.values = values
        self.mids = None if mids is None else np.asarray(mids, dtype=np.float64).reshape(grid.N, -1)

    @property
    def n(self):
        return self.values.shape[1]

    @property
    def final(self):
        return self.values[-1]

    def as_cell_function(self):
        if self.mids is None:
            return CellFunction.from_nodes(self.grid, self.values)
        return CellFunction(self.grid, self.values[:-1], self.mids, self.values[1:])

    def at(self, t):
        """Linear interpolation between nodes."""
        return np.array([np.interp(t, self.grid.nodes, self.values[:, i]) for i in range(self.n)]).T

    def sample(self, grid):
        """Node values on a coarser grid whose nodes are nodes of this one."""
        return self.values[grid.indices_in(self.grid)]

    def to_csv(self, name="q"):
        header = ["t"] + [f"{name}{i + 1}" for i in range(self.n)]
        return csvio.dumps(header, np.column_stack([self.grid.nodes, self.values]))

    @classmethod
    def from_csv(cls, text):
        header, data = csvio.loads(text)
        return cls(TimeGrid(data[:, 0]), data[:, 1:])


def _working_grid(u, grid):
    if grid is None:
        return u.grid
    if not grid.refines(u.grid):
        raise GridMismatch("solve grid must refine the control grid")
    return grid


def solve_forward(problem, u, grid=None):
    """RK4 solve of ``q' = f(q, u, t)``, ``q(0) = q0`` with ``u`` constant per cell.

    Cell midpoints are filled by cubic Hermite interpolation using the cell's
    control.

    Raises
    ------
    BlowUp
        If ``|q|_inf`` exceeds ``1e8``; ``.t`` is the start of the failing cell.
    NonFiniteValue, DomainError
        From the dynamics.
    """
    grid = _working_grid(u, grid)
    uc = np.ascontiguousarray(u.resample(grid).values)
    Q = kernels.rk4_forward(problem._f_prog, problem.q0, grid.nodes, uc, BLOWUP_BOUND)
    t = grid.nodes
    f0 = problem.dynamics(t[:-1], Q[:-1], uc)
    f1 = problem.dynamics(t[1:], Q[1:], uc)
    h = grid.h[:, None]
    mids = 0.5 * (Q[:-1] + Q[1:]) + h / 8.0 * (f0 - f1)
    return Trajectory(grid, Q, mids)


# --------------------------------------------------------------------------
# Transition matrices and Duhamel formulas
# --------------------------------------------------------------------------


def as_sampled(x, grid, shape):
    """Coerce ``x`` into a :class:`CellFunction` on ``grid`` with trailing ``shape``.

    Accepts a CellFunction, a vectorized callable of ``t``, an array of node
    values ``(N+1, *shape)`` or a constant of the given shape.
    """
    if isinstance(x, CellFunction):
        if x.grid != grid:
            if grid.refines(x.grid):
                x = x.resample(grid)
            else:
                raise GridMismatch("sampled function grid differs from solve grid")
        return x
    if callable(x):
        return CellFunction.from_function(grid, x)
    arr = np.asarray(x, dtype=np.float64)
    if arr.shape == tuple(shape) or (arr.ndim == 0 and shape == (1, 1)) or (arr.ndim == 0 and shape == (1,)):
        return CellFunction.constant(grid, arr.reshape(shape))
    if arr.shape[0] == grid.N + 1:
        return CellFunction.from_nodes(grid, arr.reshape((grid.N + 1,) + tuple(shape)))
    raise GridMismatch(f"cannot interpret array of shape {arr.shape} as samples of shape {shape}")


class TransitionTable:
    """``Z(t_i, t_j) = Phi_i Phi_j^{-1}`` with ``Phi = Z(., 0)``."""

    __slots__ = ("grid", "phi", "phi_inv", "phi_mid", "phi_mid_inv")

    def __init__(self, grid, phi, phi_mid):
        conds = np.linalg.cond(phi)
        if not np.all(np.isfinite(conds)) or np.max(conds) > COND_LIMIT:
            raise SingularTransition(f"transition matrix condition number {np.max(conds):.3g} exceeds {COND_LIMIT:g}")
        self.grid = grid
        self.phi = phi
        self.phi_inv = np.linalg.inv(phi)
        self.phi_mid = phi_mid
        self.phi_mid_inv = np.linalg.inv(phi_mid)

    @property
    def n(self):
        return self.phi.shape[1]

    def __call__(self, i, j):
        return self.phi[i] @ self.phi_inv[j]


def transition_matrix(A, grid):
    """State-transition matrix of ``Z' = A(t) Z`` by RK4 on ``grid``."""
    n = _matrix_dim(A)
    Af = as_sampled(A, grid, (n, n))
    Z, Zm = kernels.rk4_matrix(
        np.ascontiguousarray(Af.left), np.ascontiguousarray(Af.mid), np.ascontiguousarray(Af.right), grid.nodes
    )
    return TransitionTable(grid, Z, Zm)


def _matrix_dim(A):
    if isinstance(A, CellFunction):
        return A.shape[-1]
    if callable(A):
        raise TypeError("pass a CellFunction or array for A")
    arr = np.asarray(A)
    return 1 if arr.ndim <= 1 else arr.shape[-1]


def _forward_formula(table, Bf, q0):
    """``q_k = Phi_k (q0 + int_0^{t_k} Phi^{-1} B)`` with node and midpoint values."""
    g = table.grid
    src = CellFunction(
        g,
        np.einsum("kij,kj->ki", table.phi_inv[:-1], Bf.left),
        np.einsum("kij,kj->ki", table.phi_mid_inv, Bf.mid),
        np.einsum("kij,kj->ki", table.phi_inv[1:], Bf.right),
    )
    cells = src.cell_integrals()
    first, _ = src.half_integrals()
    acc = np.vstack([np.zeros(table.n), np.cumsum(cells, axis=0)]) + q0
    nodes = np.einsum("kij,kj->ki", table.phi, acc)
    mids = np.einsum("kij,kj->ki", table.phi_mid, acc[:-1] + first)
    return nodes, mids


def _backward_formula(table, Bf, pT):
    """``p_k = Phi_k^{-T} (Phi_N^T pT + int_{t_k}^T Phi^T B)``."""
    g = table.grid
    src = CellFunction(
        g,
        np.einsum("kji,kj->ki", table.phi[:-1], Bf.left),
        np.einsum("kji,kj->ki", table.phi_mid, Bf.mid),
        np.einsum("kji,kj->ki", table.phi[1:], Bf.right),
    )
    cells = src.cell_integrals()
    _, second = src.half_integrals()
    tail = np.vstack([np.cumsum(cells[::-1], axis=0)[::-1], np.zeros(table.n)])
    acc = tail + table.phi[-1].T @ pT
    nodes = np.einsum("kji,kj->ki", table.phi_inv, acc)
    mids = np.einsum("kji,kj->ki", table.phi_mid_inv, acc[1:] + second)
    return nodes, mids


def duhamel_linear(A, B, boundary, direction, grid, table=None):
    """Solve ``q' = A q + B`` forward from ``q(0)`` or ``-p' = A^T p + B`` backward from ``p(T)``.

    Parameters
    ----------
    A, B
        Sampled ``(n, n)`` and ``(n,)`` functions (see :func:`as_sampled`).
    boundary
        ``q(0)`` for ``direction='forward'``, ``p(T)`` for ``'backward'``.
    table
        Optional precomputed :class:`TransitionTable` for ``A``.

    Notes
    -----
    The backward equation is the adjoint form whose solution is
    ``p(t) = Z(T,t)^T p_T + int_t^T Z(tau,t)^T B(tau) dtau``.
    """
    boundary = np.atleast_1d(np.asarray(boundary, dtype=np.float64))
    n = boundary.size
    if table is None:
        table = transition_matrix(A, grid)
    Bf = as_sampled(B, grid, (n,))
    direction = _direction(direction)
    if direction == "forward":
        nodes, mids = _forward_formula(table, Bf, boundary)
        nodes[0] = boundary
    else:
        nodes, mids = _backward_formula(table, Bf, boundary)
        nodes[-1] = boundary
    return Trajectory(grid, nodes, mids)


def _direction(direction):
    d = str(direction).lower()
    if d not in ("forward", "backward"):
        raise ValueError("direction must be 'forward' or 'backward'")
    return d


# --------------------------------------------------------------------------
# Lipschitz diagnostics
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LipschitzEstimate:
    R: float
    L: float
    C: float


def _tube_controls(problem, u, R):
    m = problem.m
    cand = [np.zeros(m)]
    eye = np.eye(m)
    cand += [R * eye[i] for i in range(m)] + [-R * eye[i] for i in range(m)]
    for v in list(problem.omega.corners()) + [problem.omega.center()]:
        if np.max(np.abs(v)) <= R:
            cand.append(np.asarray(v, dtype=np.float64))
    return np.array(cand)


def estimate_lipschitz(problem, u, R, grid=None):
    """Sampled bound ``L`` on ``f``, ``d_q f`` and ``d_u f`` over the tube around ``q(., u)``.

    The tube ``{|x - q(t,u)|_inf <= 1, |v|_inf <= R}`` is sampled at every
    node with state offsets ``0, +-e_i`` and controls ``0, +-R e_i``, the
    corners and center of Omega that lie within ``R``, and the values of
    ``u`` on both adjacent cells.  Operator norms are max row sums.  The
    sample gives a lower bound on the true supremum.
    """
    if not R > u.linf():
        raise RangeError(f"R={R} must exceed |u|_inf={u.linf()}")
    traj = solve_forward(problem, u, grid)
    g = traj.grid
    uc = u.resample(g).values
    n = problem.n
    offsets = np.vstack([np.zeros(n), np.eye(n), -np.eye(n)])
    base = _tube_controls(problem, u, R)
    pts_t, pts_q, pts_u = [], [], []
    for k in range(g.N + 1):
        own = [uc[min(k, g.N - 1)], uc[max(k - 1, 0)]]
        ctrls = np.vstack([base] + own)
        qs = traj.values[k] + offsets
        Qg = np.repeat(qs, len(ctrls), axis=0)
        Ug = np.tile(ctrls, (len(qs), 1))
        pts_t.append(np.full(len(Qg), g.nodes[k]))
        pts_q.append(Qg)
        pts_u.append(Ug)
    t = np.concatenate(pts_t)
    Q = np.vstack(pts_q)
    U = np.vstack(pts_u)
    vals, Jq, Ju = problem.dynamics_jacobians(t, Q, U)
    L = max(
        float(np.max(np.abs(vals))),
        float(np.max(np.sum(np.abs(Jq), axis=2))),
        float(np.max(np.sum(np.abs(Ju), axis=2))),
    )
    return LipschitzEstimate(R=float(R), L=L, C=L * math.exp(problem.T * L))


# --------------------------------------------------------------------------
# Sampling along a trajectory
# --------------------------------------------------------------------------


def _three_point(grid, traj, uc):
    t = np.concatenate([grid.nodes[:-1], grid.mids, grid.nodes[1:]])
    q = np.vstack([traj.values[:-1], traj.mids, traj.values[1:]])
    u = np.vstack([uc, uc, uc])
    return t, q, u


def _split(arr, N):
    return arr[:N], arr[N : 2 * N], arr[2 * N :]


def linearize(problem, traj, u):
    """``A = d_q f`` along ``traj`` as a cell function, using each cell's control."""
    g = traj.grid
    uc = u.resample(g).values
    _, Jq, _ = problem.dynamics_jacobians(*_three_point(g, traj, uc))
    return CellFunction(g, *_split(Jq, g.N))


def sample_dynamics(problem, traj, u):
    """``f(q(t), u(t), t)`` along ``traj`` as a cell function."""
    g = traj.grid
    uc = u.resample(g).values
    vals = problem.dynamics(*_three_point(g, traj, uc))
    return CellFunction(g, *_split(vals, g.N))
