"""Linear Cauchy problems driven by measures.

Forward:   q(t) = q0 + int_0^t A q dtau + sum_i int_(0,t] B_i d eta_i
Backward:  p(t) = pT + int_t^T A^T p dtau + sum_i int_(t,T] B_i d eta_i

With the atom convention of :mod:`pmpkit.bv` both solutions are
right-continuous at interior nodes; an atom ``a`` of ``eta_i`` at ``tau``
produces the jump ``q(tau+) - q(tau-) = B_i(tau) a`` forward and
``p(tau-) - p(tau+) = B_i(tau) a`` backward.  Results are :class:`BVPath`
objects whose ``right`` arrays hold the point values.
"""

from __future__ import annotations

import numpy as np

from .bv import BVPath, CellFunction, NBVMeasure
from .errors import GridMismatch, NoConvergence
from .ode import _backward_formula, _direction, _forward_formula, as_sampled, transition_matrix

MAX_ITER = 200
TOL = 1e-12


def _prepare(A, B, eta, boundary, grid):
    measures = [eta] if isinstance(eta, NBVMeasure) else list(eta)
    if isinstance(B, (list, tuple)):
        Bs = list(B)
    else:
        Bs = [B]
    if len(Bs) != len(measures):
        raise GridMismatch(f"{len(Bs)} B functions for {len(measures)} measures")
    if grid is None:
        if not measures:
            raise GridMismatch("a grid is required when no measures are given")
        grid = measures[0].grid.union(*[mu.grid for mu in measures[1:]])
    measures = [mu if mu.grid == grid else mu.resample(grid) for mu in measures]
    boundary = np.atleast_1d(np.asarray(boundary, dtype=np.float64))
    n = boundary.size
    Af = as_sampled(A, grid, (n, n))
    Bfs = [as_sampled(b, grid, (n,)) for b in Bs]
    # continuous forcing sum_i c_i B_i and per-node atom jumps sum_i a_i B_i(t_k)
    src = CellFunction.constant(grid, np.zeros(n))
    jumps = np.zeros((grid.N + 1, n))
    for Bf, mu in zip(Bfs, measures):
        c = mu.densities[:, None]
        src = CellFunction(grid, src.left + c * Bf.left, src.mid + c * Bf.mid, src.right + c * Bf.right)
        jumps += mu.atoms[:, None] * Bf.node_values("left")
    return grid, Af, src, jumps, boundary


def solve_csp_fixed_point(A, B, eta, boundary, direction, grid=None):
    """Picard iteration of the integral map until the sup-norm update is below ``1e-12``.

    ``B`` is a list of sampled ``(n,)`` functions and ``eta`` a matching list
    of :class:`NBVMeasure` (a single pair is also accepted).  Iterates are
    node limits plus cell midpoints; cell integrals use Simpson's rule.

    Raises
    ------
    NoConvergence
        After 200 iterations.
    """
    grid, Af, src, jumps, bnd = _prepare(A, B, eta, boundary, grid)
    backward = _direction(direction) == "backward"
    N, n = grid.N, bnd.size
    L = np.tile(bnd, (N + 1, 1))
    R = L.copy()
    M = np.tile(bnd, (N, 1))
    h = grid.h[:, None]
    sub = "kji,kj->ki" if backward else "kij,kj->ki"
    for _ in range(MAX_ITER):
        left = np.einsum(sub, Af.left, R[:-1]) + src.left
        mid = np.einsum(sub, Af.mid, M) + src.mid
        right = np.einsum(sub, Af.right, L[1:]) + src.right
        cells = h / 6.0 * (left + 4.0 * mid + right)
        if backward:
            second = h / 24.0 * (-left + 8.0 * mid + 5.0 * right)
            tail = np.vstack([np.cumsum(cells[::-1], axis=0)[::-1], np.zeros(n)])
            atoms_after = np.vstack([np.cumsum(jumps[::-1], axis=0)[::-1][1:], np.zeros(n)])
            R_new = bnd + tail + atoms_after
            L_new = R_new + jumps
            L_new[0] = R_new[0]
            M_new = L_new[1:] + second
        else:
            first = h / 24.0 * (5.0 * left + 8.0 * mid - right)
            head = np.vstack([np.zeros(n), np.cumsum(cells, axis=0)])
            R_new = bnd + head + np.cumsum(jumps, axis=0)
            L_new = R_new - jumps
            L_new[0] = R_new[0]
            M_new = R_new[:-1] + first
        diff = max(np.max(np.abs(R_new - R)), np.max(np.abs(L_new - L)), np.max(np.abs(M_new - M)))
        scale = max(1.0, np.max(np.abs(R_new)), np.max(np.abs(L_new)))
        L, R, M = L_new, R_new, M_new
        if diff <= TOL * scale:
            return BVPath(grid, L, R, continuity="right")
    raise NoConvergence(f"Picard iteration did not converge in {MAX_ITER} iterations (last update {diff:.3g})")


def solve_csp_duhamel(A, B, eta, boundary, direction, grid=None, table=None):
    """Duhamel-type representation through the state-transition matrix.

    Backward: ``p(t) = Z(T,t)^T pT + sum_i int_(t,T] Z(tau,t)^T B_i(tau) d eta_i(tau)``;
    forward is the mirror image.  The density parts use the same quadrature
    as :func:`pmpkit.ode.duhamel_linear`; atoms are summed exactly.
    """
    grid, Af, src, jumps, bnd = _prepare(A, B, eta, boundary, grid)
    if table is None:
        table = transition_matrix(Af, grid)
    n = bnd.size
    if _direction(direction) == "backward":
        R, _ = _backward_formula(table, src, bnd)
        W = np.einsum("kji,kj->ki", table.phi, jumps)
        after = np.vstack([np.cumsum(W[::-1], axis=0)[::-1][1:], np.zeros(n)])
        R = R + np.einsum("kji,kj->ki", table.phi_inv, after)
        R[-1] = bnd
        L = R + jumps
    else:
        R, _ = _forward_formula(table, src, bnd)
        W = np.einsum("kij,kj->ki", table.phi_inv, jumps)
        R = R + np.einsum("kij,kj->ki", table.phi, np.cumsum(W, axis=0))
        L = R - jumps
    L[0] = R[0]
    return BVPath(grid, L, R, continuity="right")
