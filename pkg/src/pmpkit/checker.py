"""Numerical verification of the constrained maximum principle for a candidate.

For a candidate ``(u*, psi, eta)`` the checker recomputes ``q*`` from
``u*``, solves the measure-driven adjoint

    -dp = d_q f(q*, u*, t)^T p dt + sum_i d_q G_i(q*, t) d eta_i,
    p(T) = psi grad Psi(q*(T)),

and reports residuals for feasibility, transversality, pointwise
minimization of ``H = <p, f(q, u, t)>`` over Omega, complementary slackness
and nontriviality.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .bv import CellFunction, NBVMeasure, stieltjes_integral, total_variation
from .errors import GridMismatch, PMPKitError, UnsupportedOmega
from .ode import ControlSignal, _split, _three_point, linearize, solve_forward
from .problem import Ball, Box, FiniteSet
from .stieltjes_cauchy import solve_csp_duhamel

BOX_POINTS = 33
GOLDEN_ITERS = 20
BALL_RADII = 17
BALL_ANGLES = 64
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class Tolerances:
    feasibility: float = 1e-6
    hamiltonian: float = 1e-3
    slackness: float = 1e-4
    transversality: float = 1e-8
    nontriviality: float = 1e-10

    def __post_init__(self):
        for name in ("feasibility", "hamiltonian", "slackness", "transversality", "nontriviality"):
            if not getattr(self, name) > 0:
                raise ValueError(f"tolerance {name} must be positive")


@dataclass(frozen=True)
class Candidate:
    """Candidate control with multipliers; ``q*`` is always recomputed."""

    u: ControlSignal
    psi: float
    eta: tuple = ()

    def __post_init__(self):
        if not self.psi >= 0:
            raise ValueError("psi must be nonnegative")
        object.__setattr__(self, "psi", float(self.psi))
        object.__setattr__(self, "eta", tuple(self.eta))


@dataclass(frozen=True)
class Condition:
    name: str
    value: float
    tolerance: float
    passed: bool
    detail: str = ""


@dataclass
class Certificate:
    verdict: str
    conditions: list = field(default_factory=list)
    psi: float = 0.0
    hamiltonian_l1: float = 0.0
    hamiltonian_table: dict = field(default_factory=dict)
    error: str = ""

    @property
    def passed(self):
        return self.verdict == "PASS"

    def condition(self, name):
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)


# --------------------------------------------------------------------------
# Adjoint
# --------------------------------------------------------------------------


def working_grid(candidate, grid=None):
    g = candidate.u.grid
    others = [mu.grid for mu in candidate.eta]
    if grid is not None:
        others.append(grid)
    return g.union(*others) if others else g


def constraint_gradients(problem, traj):
    """``d_q G_i`` along ``traj`` as ``j`` cell functions of shape ``(n,)``."""
    g = traj.grid
    t, q, _ = _three_point(g, traj, np.zeros((g.N, problem.m)))
    _, J = problem.constraint_jacobians(t, q)
    parts = _split(J, g.N)
    return [CellFunction(g, parts[0][:, i], parts[1][:, i], parts[2][:, i]) for i in range(problem.j)]


def constraint_values(problem, traj):
    g = traj.grid
    t, q, _ = _three_point(g, traj, np.zeros((g.N, problem.m)))
    vals = problem.constraints(t, q)
    parts = _split(vals, g.N)
    return [CellFunction(g, parts[0][:, i], parts[1][:, i], parts[2][:, i]) for i in range(problem.j)]


def _adjoint(problem, candidate, grid):
    if len(candidate.eta) != problem.j:
        raise GridMismatch(f"candidate has {len(candidate.eta)} measures, problem has j={problem.j}")
    g = working_grid(candidate, grid)
    traj = solve_forward(problem, candidate.u, g)
    A = linearize(problem, traj, candidate.u)
    Bs = constraint_gradients(problem, traj)
    etas = [mu if mu.grid == g else mu.resample(g) for mu in candidate.eta]
    pT = candidate.psi * problem.terminal_gradient(traj.final)
    p = solve_csp_duhamel(A, Bs, etas, pT, "backward", g)
    return traj, p, etas


def assemble_adjoint(problem, candidate, grid=None):
    """Adjoint path ``p`` of the candidate as a :class:`BVPath`."""
    return _adjoint(problem, candidate, grid)[1]


# --------------------------------------------------------------------------
# Hamiltonian minimization
# --------------------------------------------------------------------------


def _golden_axis(H, v, best, axis, a, b):
    """Batched golden-section search along one coordinate, others fixed."""
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)

    def at(x):
        w = v.copy()
        w[:, axis] = x
        return H(w)

    fc, fd = at(c), at(d)
    for _ in range(GOLDEN_ITERS - 1):
        left = fc < fd
        # keep [a, d] when c is better, else [c, b]; one new probe per node
        a, b = np.where(left, a, c), np.where(left, d, b)
        x = np.where(left, b - _INV_PHI * (b - a), a + _INV_PHI * (b - a))
        fx = at(x)
        c, d, fc, fd = (
            np.where(left, x, d),
            np.where(left, c, x),
            np.where(left, fx, fd),
            np.where(left, fc, fx),
        )
    x = np.where(fc < fd, c, d)
    fx = np.minimum(fc, fd)
    better = fx < best
    v = v.copy()
    v[better, axis] = x[better]
    return v, np.where(better, fx, best)


def _enumerate(H, pts, K):
    vals = np.stack([H(np.tile(p, (K, 1))) for p in pts], axis=1)
    idx = np.argmin(vals, axis=1)
    return pts[idx].copy(), vals[np.arange(K), idx]


def minimize_hamiltonian(H, omega, K):
    """Approximate ``min_{v in Omega} H_k(v)`` for ``K`` nodes at once.

    ``H`` maps a ``(K, m)`` array of controls to ``(K,)`` values.
    """
    if isinstance(omega, FiniteSet):
        return _enumerate(H, omega.corners(), K)
    if isinstance(omega, Ball):
        if omega.dim == 1:
            c, r = omega.center()[0], omega.radius
            omega = Box((c - r,), (c + r,))
        elif omega.dim == 2:
            radii = np.linspace(0.0, omega.radius, BALL_RADII)[1:]
            ang = 2 * np.pi * np.arange(BALL_ANGLES) / BALL_ANGLES
            ring = np.stack([np.cos(ang), np.sin(ang)], axis=1)
            pts = np.vstack([omega.center()[None, :]] + [omega.center() + r * ring for r in radii])
            return _enumerate(H, pts, K)
        else:
            raise UnsupportedOmega("ball control sets are only supported for m <= 2")
    if not isinstance(omega, Box):
        raise UnsupportedOmega(f"unsupported control set {type(omega).__name__}")
    lo, hi = np.asarray(omega.lo), np.asarray(omega.hi)
    axes = [np.linspace(lo[i], hi[i], BOX_POINTS) for i in range(omega.dim)]
    pts = np.array(list(itertools.product(*axes)))
    v, best = _enumerate(H, pts, K)
    for i in range(omega.dim):
        step = (hi[i] - lo[i]) / (BOX_POINTS - 1)
        a = np.maximum(lo[i], v[:, i] - step)
        b = np.minimum(hi[i], v[:, i] + step)
        v, best = _golden_axis(H, v, best, i, a, b)
    return v, best


def node_controls(u, grid):
    """Control seen at each node: the value of the cell starting there (last cell at ``T``)."""
    vals = u.resample(grid).values
    return np.vstack([vals, vals[-1:]])


def node_costates(p):
    """Left values at nodes ``k >= 1`` (the value at 0 is unambiguous)."""
    return p.left.copy()


def hamiltonian_residual(problem, traj, u, p, omega=None, exclude=None):
    """Per-node ``H(u*) - min_Omega H`` with sup (over non-excluded nodes) and L1 summaries.

    Returns
    -------
    sup, l1, table
        ``table`` holds ``t``, ``residual``, ``argmin`` and ``excluded``.
    """
    omega = problem.omega if omega is None else omega
    g = traj.grid
    t = g.nodes
    q = traj.values
    pk = node_costates(p)
    us = node_controls(u, g)
    K = g.N + 1

    def H(v):
        return np.einsum("ki,ki->k", pk, problem.dynamics(t, q, v))

    v, best = minimize_hamiltonian(H, omega, K)
    h_star = H(us)
    inside = np.array([omega.contains(x) for x in us])
    better = inside & (h_star < best)
    v[better] = us[better]
    best = np.where(better, h_star, best)
    res = np.maximum(h_star - best, 0.0)
    mask = np.zeros(K, dtype=bool) if exclude is None else np.asarray(exclude, dtype=bool)
    kept = res[~mask]
    sup = float(np.max(kept)) if kept.size else 0.0
    l1 = float(np.sum(0.5 * g.h * (res[:-1] + res[1:])))
    table = {"t": t.copy(), "residual": res, "argmin": v, "excluded": mask}
    return sup, l1, table


# --------------------------------------------------------------------------
# Slackness and the full check
# --------------------------------------------------------------------------


def slackness_parts(problem, traj, eta):
    """Per constraint ``(int G^+ d eta, int G^- d eta)``, both nonnegative."""
    out = []
    for Gi, mu in zip(constraint_values(problem, traj), eta):
        if mu.grid != traj.grid:
            mu = mu.resample(traj.grid)
        pos = stieltjes_integral(Gi.map(lambda x: np.maximum(x, 0.0)), mu)
        neg = stieltjes_integral(Gi.map(lambda x: np.maximum(-x, 0.0)), mu)
        out.append((pos, neg))
    return out


def slackness_residual(problem, traj, eta):
    """``|int G_i(q*(t), t) d eta_i(t)|`` per constraint."""
    out = []
    for Gi, mu in zip(constraint_values(problem, traj), eta):
        if mu.grid != traj.grid:
            mu = mu.resample(traj.grid)
        out.append(abs(stieltjes_integral(Gi, mu)))
    return out


def feasibility_residual(problem, traj):
    """``max_i max_k G_i(q*(t_k), t_k)^+`` over grid nodes."""
    if problem.j == 0:
        return 0.0
    vals = problem.constraints(traj.grid.nodes, traj.values)
    return float(max(0.0, np.max(vals)))


def check_certificate(problem, candidate, tolerances=None, grid=None):
    """Evaluate every condition and return a :class:`Certificate`.

    Solver failures give verdict ``ERROR`` with the cause in ``error``.
    """
    tol = tolerances or Tolerances()
    try:
        traj, p, etas = _adjoint(problem, candidate, grid)
        g = traj.grid
        atom_nodes = np.zeros(g.N + 1, dtype=bool)
        for mu in etas:
            atom_nodes |= mu.atoms > 0
        sup, l1, table = hamiltonian_residual(problem, traj, candidate.u, p, exclude=atom_nodes)
        slack = slackness_residual(problem, traj, etas)
        feas = feasibility_residual(problem, traj)
        trans = float(np.linalg.norm(p.right[-1] - candidate.psi * problem.terminal_gradient(traj.final)))
        variations = [total_variation(mu.to_path()) for mu in etas]
    except PMPKitError as exc:
        return Certificate(verdict="ERROR", psi=candidate.psi, error=f"{type(exc).__name__}: {exc}")
    nontriv = candidate.psi**2 + sum(v * v for v in variations)
    conds = [
        Condition("feasibility", feas, tol.feasibility, feas <= tol.feasibility),
        Condition("transversality", trans, tol.transversality, trans <= tol.transversality),
    ]
    kept = np.where(~table["excluded"])[0]
    if kept.size:
        k = kept[np.argmax(table["residual"][kept])]
        where = f"max at t={g.nodes[k]:.6g}"
    else:
        where = "no nodes checked"
    conds.append(Condition("hamiltonian", sup, tol.hamiltonian, sup <= tol.hamiltonian, where))
    for i, s in enumerate(slack):
        conds.append(Condition(f"slackness[{i + 1}]", s, tol.slackness, s <= tol.slackness))
    conds.append(
        Condition("nontriviality", nontriv, tol.nontriviality, nontriv >= tol.nontriviality, "value must be >= floor")
    )
    for i, mu in enumerate(etas):
        mono = bool(np.all(mu.atoms >= 0) and np.all(mu.densities >= 0))
        conds.append(Condition(f"monotone[{i + 1}]", 0.0 if mono else 1.0, 0.0, mono))
    verdict = "PASS" if all(c.passed for c in conds) else "FAIL"
    return Certificate(verdict=verdict, conditions=conds, psi=candidate.psi, hamiltonian_l1=l1, hamiltonian_table=table)


__all__ = [
    "Candidate",
    "Certificate",
    "Condition",
    "NBVMeasure",
    "Tolerances",
    "assemble_adjoint",
    "check_certificate",
    "feasibility_residual",
    "hamiltonian_residual",
    "minimize_hamiltonian",
    "slackness_parts",
    "slackness_residual",
]
