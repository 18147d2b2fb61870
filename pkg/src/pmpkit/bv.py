"""Time grids, sampled functions, bounded-variation paths and NBV measures.

Atom convention used throughout the package: a measure atom ``a_k`` sits at
node ``t_k`` (``k >= 1``) and belongs to every integral over ``(a, b]`` with
``a < t_k <= b``.  In particular the atom at ``T`` is charged to every
``int_s^T`` with ``s < T``, and ``eta(t) = sum_{t_k < t} a_k + int_0^t c``
is left-continuous.
"""

from __future__ import annotations

import math

import numpy as np

from . import csvio
from .errors import GridMismatch, RangeError

GRID_TOL = 1e-12


# --------------------------------------------------------------------------
# TimeGrid
# --------------------------------------------------------------------------


class TimeGrid:
    """Strictly increasing nodes ``0 = t_0 < ... < t_N = T``."""

    __slots__ = ("nodes",)

    def __init__(self, nodes):
        nodes = np.array(nodes, dtype=np.float64)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("a grid needs at least two nodes")
        if nodes[0] != 0.0:
            raise ValueError("grid must start at 0")
        if not np.all(np.diff(nodes) > 0):
            raise ValueError("grid nodes must be strictly increasing")
        nodes.setflags(write=False)
        self.nodes = nodes

    @classmethod
    def uniform(cls, N, T):
        if N < 1:
            raise ValueError("N must be at least 1")
        nodes = np.linspace(0.0, float(T), int(N) + 1)
        nodes[-1] = float(T)
        return cls(nodes)

    @property
    def N(self):
        return self.nodes.size - 1

    @property
    def T(self):
        return float(self.nodes[-1])

    @property
    def h(self):
        return np.diff(self.nodes)

    @property
    def mids(self):
        return 0.5 * (self.nodes[:-1] + self.nodes[1:])

    def __len__(self):
        return self.nodes.size

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and np.array_equal(self.nodes, other.nodes)

    def __hash__(self):
        return hash(self.nodes.tobytes())

    def __repr__(self):
        return f"TimeGrid(N={self.N}, T={self.T})"

    def locate(self, t):
        """Cell index ``k`` with ``t_k <= t < t_{k+1}`` (``N-1`` at ``T``)."""
        k = np.searchsorted(self.nodes, t, side="right") - 1
        return np.clip(k, 0, self.N - 1)

    def node_index(self, t):
        """Index of the node equal to ``t`` up to the grid tolerance, else ``None``."""
        tol = GRID_TOL * max(1.0, self.T)
        k = int(np.searchsorted(self.nodes, t))
        for cand in (k - 1, k):
            if 0 <= cand <= self.N and abs(self.nodes[cand] - t) <= tol:
                return cand
        return None

    def union(self, *others):
        """Smallest grid containing these nodes and those of ``others``.

        ``others`` may be grids or plain arrays of times in ``[0, T]``.
        """
        pts = [self.nodes]
        for o in others:
            arr = o.nodes if isinstance(o, TimeGrid) else np.asarray(o, dtype=np.float64).ravel()
            if arr.size and (arr.min() < 0 or arr.max() > self.T * (1 + GRID_TOL)):
                raise RangeError("union points must lie in [0, T]")
            pts.append(arr)
        if len(pts) == 1:
            return self
        tol = GRID_TOL * max(1.0, self.T)
        extra = np.sort(np.concatenate(pts[1:]))
        extra = extra[(extra > tol) & (extra < self.T - tol)]
        if extra.size:
            # discard points within tol of an existing node, then of each other
            k = np.clip(np.searchsorted(self.nodes, extra), 1, self.N)
            gap = np.minimum(extra - self.nodes[k - 1], self.nodes[k] - extra)
            extra = extra[gap > tol]
        if extra.size:
            extra = extra[np.concatenate([[True], np.diff(extra) > tol])]
        if extra.size == 0:
            return self
        return TimeGrid(np.sort(np.concatenate([self.nodes, extra])))

    def refine(self, factor):
        """Split every cell into ``factor`` equal pieces."""
        factor = int(factor)
        if factor == 1:
            return self
        frac = np.arange(factor) / factor
        pts = (self.nodes[:-1, None] + self.h[:, None] * frac[None, :]).ravel()
        return TimeGrid(np.append(pts, self.T))

    def indices_in(self, fine):
        """Indices of this grid's nodes inside the finer grid ``fine``.

        Raises :class:`GridMismatch` if ``fine`` does not refine this grid.
        """
        if abs(fine.T - self.T) > GRID_TOL * max(1.0, self.T):
            raise GridMismatch("grids have different horizons")
        idx = np.searchsorted(fine.nodes, self.nodes)
        idx = np.clip(idx, 0, fine.N)
        lower = np.clip(idx - 1, 0, fine.N)
        pick = np.where(
            np.abs(fine.nodes[lower] - self.nodes) < np.abs(fine.nodes[idx] - self.nodes), lower, idx
        )
        if np.max(np.abs(fine.nodes[pick] - self.nodes)) > GRID_TOL * max(1.0, self.T):
            raise GridMismatch("grid does not refine the coarser grid")
        return pick

    def refines(self, coarse):
        try:
            coarse.indices_in(self)
        except GridMismatch:
            return False
        return True

    def parent_cells(self, coarse):
        """For every cell of this (finer) grid, the coarse cell containing it."""
        idx = coarse.indices_in(self)
        return np.searchsorted(idx, np.arange(self.N), side="right") - 1


# --------------------------------------------------------------------------
# CellFunction
# --------------------------------------------------------------------------


class CellFunction:
    """A function sampled at the left end, midpoint and right end of each cell.

    Values may jump at nodes (``right[k-1] != left[k]``), which is how
    integrands built from piecewise-constant controls are stored.  Trailing
    dimensions are allowed (vectors, matrices).  Cell integrals use
    Simpson's rule, which reduces to the trapezoid rule when the midpoint is
    the average of the endpoints.
    """

    __slots__ = ("grid", "left", "mid", "right")

    def __init__(self, grid, left, mid, right):
        left = np.asarray(left, dtype=np.float64)
        mid = np.asarray(mid, dtype=np.float64)
        right = np.asarray(right, dtype=np.float64)
        if not (left.shape == mid.shape == right.shape) or left.shape[0] != grid.N:
            raise GridMismatch("cell samples must have shape (N, ...) matching the grid")
        self.grid = grid
        self.left = left
        self.mid = mid
        self.right = right

    @classmethod
    def from_nodes(cls, grid, values):
        """Continuous function known at nodes only (trapezoid quadrature)."""
        values = np.asarray(values, dtype=np.float64)
        if values.shape[0] != grid.N + 1:
            raise GridMismatch(f"expected {grid.N + 1} node values, got {values.shape[0]}")
        return cls(grid, values[:-1], 0.5 * (values[:-1] + values[1:]), values[1:])

    @classmethod
    def from_function(cls, grid, fn):
        """Sample a vectorized callable ``fn(t_array)`` at nodes and midpoints."""
        nodes = np.asarray(fn(grid.nodes), dtype=np.float64)
        mids = np.asarray(fn(grid.mids), dtype=np.float64)
        return cls(grid, nodes[:-1], mids, nodes[1:])

    @classmethod
    def constant(cls, grid, value):
        v = np.broadcast_to(np.asarray(value, dtype=np.float64), (grid.N,) + np.shape(value))
        return cls(grid, v.copy(), v.copy(), v.copy())

    @property
    def shape(self):
        return self.left.shape[1:]

    def node_values(self, side="left"):
        """Values at the nodes: left limits (``side='left'``) or right limits.

        Node 0 always uses the first cell's left sample and node ``N`` the
        last cell's right sample.
        """
        if side == "left":
            return np.concatenate([self.left[:1], self.right])
        return np.concatenate([self.left, self.right[-1:]])

    def map(self, fn):
        return CellFunction(self.grid, fn(self.left), fn(self.mid), fn(self.right))

    def cell_integrals(self):
        h = self.grid.h.reshape((-1,) + (1,) * len(self.shape))
        return h / 6.0 * (self.left + 4.0 * self.mid + self.right)

    def half_integrals(self):
        """Integrals over the first and second half of every cell."""
        h = self.grid.h.reshape((-1,) + (1,) * len(self.shape))
        first = h / 24.0 * (5.0 * self.left + 8.0 * self.mid - self.right)
        second = h / 24.0 * (-self.left + 8.0 * self.mid + 5.0 * self.right)
        return first, second

    def _partial(self, k, s):
        # integral over [t_k, t_k + s h_k] of the quadratic through the samples
        h = self.grid.h[k]
        a0 = 2 * s**3 / 3 - 1.5 * s**2 + s
        am = -4 * s**3 / 3 + 2 * s**2
        a1 = 2 * s**3 / 3 - 0.5 * s**2
        return h * (a0 * self.left[k] + am * self.mid[k] + a1 * self.right[k])

    def _local(self, k, t):
        return (t - self.grid.nodes[k]) / self.grid.h[k]

    def integral(self, a, b):
        """``int_a^b`` of the sampled function, ``0 <= a <= b <= T``."""
        g = self.grid
        if a < 0 or b > g.T * (1 + GRID_TOL) or a > b:
            raise RangeError(f"interval [{a}, {b}] not within [0, {g.T}]")
        b = min(b, g.T)
        if a == b:
            return np.zeros(self.shape)
        ka, kb = int(g.locate(a)), int(g.locate(b))
        if b == g.nodes[kb] and kb > 0 and kb > ka:
            kb -= 1
        sa, sb = self._local(ka, a), self._local(kb, b)
        if ka == kb:
            return self._partial(ka, sb) - self._partial(ka, sa)
        cells = self.cell_integrals()
        total = cells[ka] - self._partial(ka, sa)
        total = total + cells[ka + 1 : kb].sum(axis=0)
        return total + self._partial(kb, sb)

    def at(self, t):
        """Quadratic interpolation inside the cell containing ``t``."""
        t = np.asarray(t, dtype=np.float64)
        k = self.grid.locate(t)
        s = (t - self.grid.nodes[k]) / self.grid.h[k]
        s = s.reshape(s.shape + (1,) * len(self.shape))
        l0 = 2 * (s - 0.5) * (s - 1)
        lm = -4 * s * (s - 1)
        l1 = 2 * s * (s - 0.5)
        return l0 * self.left[k] + lm * self.mid[k] + l1 * self.right[k]

    def resample(self, fine):
        """Restrict the cellwise quadratics to a grid refining this one."""
        parent = fine.parent_cells(self.grid)
        g = self.grid
        shp = (-1,) + (1,) * len(self.shape)

        def interp(t):
            s = ((t - g.nodes[parent]) / g.h[parent]).reshape(shp)
            l0 = 2 * (s - 0.5) * (s - 1)
            lm = -4 * s * (s - 1)
            l1 = 2 * s * (s - 0.5)
            return l0 * self.left[parent] + lm * self.mid[parent] + l1 * self.right[parent]

        return CellFunction(fine, interp(fine.nodes[:-1]), interp(fine.mids), interp(fine.nodes[1:]))


def as_cell_function(z, grid):
    if isinstance(z, CellFunction):
        if z.grid != grid:
            if grid.refines(z.grid):
                return z.resample(grid)
            raise GridMismatch("integrand grid differs from measure grid")
        return z
    return CellFunction.from_nodes(grid, z)


# --------------------------------------------------------------------------
# BVPath
# --------------------------------------------------------------------------


class BVPath:
    """Vector path, linear on each open cell, with jumps only at nodes.

    ``left[k]`` and ``right[k]`` are the one-sided limits at ``t_k``;
    ``left[0] == right[0]`` is the value at 0 and ``right[N]`` the value at
    ``T``.  ``continuity`` fixes the value at interior nodes: ``'left'``
    means ``path(t_k) = left[k]``.
    """

    __slots__ = ("grid", "left", "right", "continuity")

    def __init__(self, grid, left, right, continuity="left"):
        left = np.asarray(left, dtype=np.float64)
        right = np.asarray(right, dtype=np.float64)
        if left.ndim == 1:
            left, right = left[:, None], right[:, None]
        if left.shape != right.shape or left.shape[0] != grid.N + 1:
            raise GridMismatch("path values must have shape (N+1, d)")
        if not np.array_equal(left[0], right[0]):
            raise ValueError("left and right values at t=0 must agree")
        if continuity not in ("left", "right"):
            raise ValueError("continuity must be 'left' or 'right'")
        self.grid = grid
        self.left = left
        self.right = right
        self.continuity = continuity

    @classmethod
    def continuous(cls, grid, values):
        values = np.asarray(values, dtype=np.float64)
        return cls(grid, values, values.copy())

    @property
    def dim(self):
        return self.left.shape[1]

    def values(self):
        """Point values at the nodes according to ``continuity``."""
        out = (self.left if self.continuity == "left" else self.right).copy()
        out[-1] = self.right[-1]
        return out

    def jumps(self):
        """``right[k] - left[k]`` at every node."""
        return self.right - self.left

    def __call__(self, t):
        t = float(t)
        g = self.grid
        k = g.node_index(t)
        if k is not None:
            return self.values()[k]
        c = int(g.locate(t))
        s = (t - g.nodes[c]) / g.h[c]
        return (1 - s) * self.right[c] + s * self.left[c + 1]

    def sup_norm(self):
        return float(max(np.max(np.abs(self.left)), np.max(np.abs(self.right))))

    def to_csv(self, name="p"):
        d = self.dim
        header = ["t"] + [f"{name}{i + 1}_left" for i in range(d)] + [f"{name}{i + 1}_right" for i in range(d)]
        rows = np.column_stack([self.grid.nodes, self.left, self.right])
        return csvio.dumps(header, rows)

    @classmethod
    def from_csv(cls, text, continuity="left"):
        header, data = csvio.loads(text)
        d = (len(header) - 1) // 2
        grid = TimeGrid(data[:, 0])
        return cls(grid, data[:, 1 : 1 + d], data[:, 1 + d :], continuity)


def total_variation(path):
    """Exact variation of the piecewise-linear-with-jumps representative.

    For vector paths the Euclidean norm is used on each increment.
    """
    along = np.linalg.norm(path.left[1:] - path.right[:-1], axis=1)
    jumps = np.linalg.norm(path.right[1:] - path.left[1:], axis=1)
    return float(math.fsum(along) + math.fsum(jumps))


def normalize_bv(path):
    """Return the normalized representative: zero at 0 and left-continuous."""
    base = path.right[0]
    return BVPath(path.grid, path.left - base, path.right - base, continuity="left")


# --------------------------------------------------------------------------
# NBVMeasure
# --------------------------------------------------------------------------


class NBVMeasure:
    """Nonnegative measure ``d eta``: atoms at nodes ``k >= 1`` plus cell densities."""

    __slots__ = ("grid", "atoms", "densities")

    def __init__(self, grid, atoms=None, densities=None, tol=0.0):
        atoms = np.zeros(grid.N + 1) if atoms is None else np.array(atoms, dtype=np.float64)
        densities = np.zeros(grid.N) if densities is None else np.array(densities, dtype=np.float64)
        if atoms.shape != (grid.N + 1,) or densities.shape != (grid.N,):
            raise GridMismatch("atoms must have shape (N+1,) and densities (N,)")
        if atoms[0] != 0.0:
            raise ValueError("a normalized measure carries no atom at t=0")
        if np.any(atoms < -tol) or np.any(densities < -tol):
            raise ValueError("atoms and densities must be nonnegative")
        if not (np.all(np.isfinite(atoms)) and np.all(np.isfinite(densities))):
            raise ValueError("atoms and densities must be finite")
        atoms = np.maximum(atoms, 0.0)
        densities = np.maximum(densities, 0.0)
        atoms.setflags(write=False)
        densities.setflags(write=False)
        self.grid = grid
        self.atoms = atoms
        self.densities = densities

    @classmethod
    def zero(cls, grid):
        return cls(grid)

    @classmethod
    def atom(cls, grid, t, weight=1.0):
        k = grid.node_index(t)
        if k is None or k == 0:
            raise GridMismatch(f"atom time {t} is not a grid node t_k with k >= 1")
        a = np.zeros(grid.N + 1)
        a[k] = weight
        return cls(grid, atoms=a)

    @classmethod
    def from_density(cls, grid, density):
        """Density given as a callable (sampled at midpoints) or per-cell array."""
        c = density(grid.mids) if callable(density) else density
        return cls(grid, densities=np.broadcast_to(np.asarray(c, dtype=np.float64), (grid.N,)))

    @classmethod
    def from_path(cls, path, tol=1e-12):
        """Measure induced by a nondecreasing scalar path."""
        if path.dim != 1:
            raise ValueError("from_path expects a scalar path")
        left, right = path.left[:, 0], path.right[:, 0]
        atoms = right - left
        atoms[0] = 0.0
        dens = (left[1:] - right[:-1]) / path.grid.h
        return cls(path.grid, atoms, dens, tol=tol)

    def to_path(self):
        """The normalized (left-continuous, zero at 0) distribution function."""
        inc = self.densities * self.grid.h
        left = np.zeros(self.grid.N + 1)
        right = np.zeros(self.grid.N + 1)
        acc = 0.0
        for k in range(self.grid.N):
            right[k] = acc + self.atoms[k]
            acc = right[k] + inc[k]
            left[k + 1] = acc
        right[-1] = left[-1] + self.atoms[-1]
        return BVPath(self.grid, left, right, continuity="left")

    def total_mass(self):
        return float(math.fsum(self.atoms) + math.fsum(self.densities * self.grid.h))

    variation = total_mass

    def scaled(self, c):
        return NBVMeasure(self.grid, self.atoms * c, self.densities * c)

    def resample(self, fine):
        """Same measure on a grid refining this one."""
        idx = self.grid.indices_in(fine)
        atoms = np.zeros(fine.N + 1)
        atoms[idx] = self.atoms
        dens = self.densities[fine.parent_cells(self.grid)]
        return NBVMeasure(fine, atoms, dens)

    def atom_indices(self, tol=0.0):
        return np.nonzero(self.atoms > tol)[0]

    def to_csv(self):
        return measures_to_csv([self])

    @classmethod
    def from_csv(cls, text):
        ms = measures_from_csv(text)
        if len(ms) != 1:
            raise ValueError(f"expected one measure, found {len(ms)}")
        return ms[0]


def measures_to_csv(measures):
    """Rows ``t, atom, density`` (numbered columns for several measures).

    The density on row ``k`` is the density of cell ``(t_k, t_{k+1})``; the
    last row carries 0.
    """
    if not measures:
        raise ValueError("need at least one measure")
    grid = measures[0].grid
    if len(measures) == 1:
        header = ["t", "atom", "density"]
    else:
        header = ["t"]
        for i in range(len(measures)):
            header += [f"atom{i + 1}", f"density{i + 1}"]
    cols = [grid.nodes]
    for mu in measures:
        if mu.grid != grid:
            raise GridMismatch("measures must share one grid")
        cols += [mu.atoms, np.append(mu.densities, 0.0)]
    return csvio.dumps(header, np.column_stack(cols))


def measures_from_csv(text):
    header, data = csvio.loads(text)
    if len(header) < 3 or (len(header) - 1) % 2 or header[0] != "t":
        raise ValueError("measure CSV header must be t, atom, density[, ...]")
    grid = TimeGrid(data[:, 0])
    out = []
    for i in range((len(header) - 1) // 2):
        out.append(NBVMeasure(grid, data[:, 1 + 2 * i], data[:-1, 2 + 2 * i]))
    return out


# --------------------------------------------------------------------------
# Stieltjes quadrature
# --------------------------------------------------------------------------


def stieltjes_integral(z, eta, a=0.0, b=None):
    """``int_{(a, b]} z d eta`` with atoms exact and densities by quadrature.

    ``z`` is a :class:`CellFunction` or an array of node values (trailing
    dimensions allowed, integrated componentwise).  At an atom node the left
    limit of ``z`` is used; for continuous integrands this is just ``z(t_k)``.

    Raises
    ------
    RangeError
        If ``[a, b]`` is not contained in ``[0, T]`` or ``a > b``.
    """
    g = eta.grid
    if b is None:
        b = g.T
    if a < 0 or b > g.T * (1 + GRID_TOL) or a > b:
        raise RangeError(f"interval [{a}, {b}] not within [0, {g.T}]")
    zc = as_cell_function(z, g)
    dens = zc.map(lambda v: v * eta.densities.reshape((-1,) + (1,) * (v.ndim - 1)))
    total = dens.integral(a, min(b, g.T))
    zn = zc.node_values("left")
    mask = (g.nodes > a) & (g.nodes <= b)
    mask &= eta.atoms > 0
    if np.any(mask):
        w = eta.atoms[mask].reshape((-1,) + (1,) * (zn.ndim - 1))
        total = total + (zn[mask] * w).sum(axis=0)
    if np.ndim(total) == 0:
        return float(total)
    return total


def fubini_residual(phi, eta):
    """``|LHS - RHS|`` of the Fubini-type exchange

        int_0^T < int_0^tau Phi(tau, s) ds, d eta(tau) >
          = int_0^T int_(s, T] < Phi(tau, s), d eta(tau) > ds.

    ``phi`` has shape ``(N+1, N+1)`` (``phi[i, k] = Phi(t_i, s_k)``) with a
    single measure, or ``(N+1, N+1, j)`` with a list of ``j`` measures.  Both
    sides use the trapezoid rule in ``s`` and :func:`stieltjes_integral`
    conventions in ``tau``.
    """
    measures = list(eta) if isinstance(eta, (list, tuple)) else [eta]
    phi = np.asarray(phi, dtype=np.float64)
    if phi.ndim == 2:
        phi = phi[:, :, None]
    g = measures[0].grid
    N = g.N
    if phi.shape != (N + 1, N + 1, len(measures)):
        raise GridMismatch("phi must be sampled on the grid x grid lattice")
    h = g.h
    lhs = 0.0
    rhs = 0.0
    for c, mu in enumerate(measures):
        P = phi[:, :, c]
        # inner s-integral up to tau = t_i, trapezoid on the nodes 0..i
        seg = 0.5 * (P[:, 1:] + P[:, :-1]) * h[None, :]
        seg = np.where(np.arange(N)[None, :] < np.arange(N + 1)[:, None], seg, 0.0)
        F = seg.sum(axis=1)
        lhs += stieltjes_integral(F, mu)
        # G_k = int_(t_k, T] Phi(., s_k) d eta, then its left limit at t_k
        cell = 0.5 * (P[:-1, :] + P[1:, :]) * (mu.densities * h)[:, None]
        cell = np.where(np.arange(N)[:, None] >= np.arange(N + 1)[None, :], cell, 0.0)
        atom = P * mu.atoms[:, None]
        atom = np.where(np.arange(N + 1)[:, None] > np.arange(N + 1)[None, :], atom, 0.0)
        G = cell.sum(axis=0) + atom.sum(axis=0)
        G_minus = G + np.diagonal(P) * mu.atoms
        rhs += float(np.sum(0.5 * h * (G[:-1] + G_minus[1:])))
    return abs(lhs - rhs)
