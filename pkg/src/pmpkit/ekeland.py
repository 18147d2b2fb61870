"""Experimental descent on the penalized functional

    J(u) = sqrt( ((Psi(q(T,u)) - ref + eps)^+)^2 + d_S(G(q(.,u)))^2 )

using spike variations as the only moves.  ``d_S`` is the sup-norm distance
to the nonpositive cone.  A move from ``u`` to ``v`` is accepted when
``J(u) - J(v) > sqrt(eps) |v - u|_L1``.  This mirrors the penalization
argument behind the constrained maximum principle; it is not a competitive
optimizer.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import csvio
from .bv import NBVMeasure
from .errors import BoundNotAchieved, BudgetExhausted, DegenerateState, RangeError
from .ode import ControlSignal, solve_forward
from .spike import build_qrho, perturbation_source, spike_control

DEFAULT_EPS = (0.25, 0.05, 0.01, 1e-3, 1e-4)
DEFAULT_RHOS = (0.5, 0.25, 0.1, 0.05, 0.02)
MAX_CELL_FACTOR = 50


def distance_to_cone(g_values):
    """Sup-norm distance of sampled ``g`` to the nonpositive cone: ``max_i max_t g_i(t)^+``."""
    g = np.asarray(g_values, dtype=np.float64)
    if g.size == 0:
        return 0.0
    return float(max(0.0, np.max(g)))


@dataclass(frozen=True)
class Evaluation:
    J: float
    cost: float
    feasibility: float


def _evaluate(problem, u, reference_cost, eps, grid=None):
    g = u.grid if grid is None else grid.union(u.grid)
    traj = solve_forward(problem, u, g)
    cost = problem.terminal_cost(traj.final)
    d = distance_to_cone(problem.constraints(g.nodes, traj.values)) if problem.j else 0.0
    gap = max(cost - reference_cost + eps, 0.0)
    return Evaluation(J=math.hypot(gap, d), cost=cost, feasibility=d), traj


def penalized_cost(problem, u, reference_cost, eps, grid=None):
    """Value of the penalized functional at ``u``."""
    return _evaluate(problem, u, reference_cost, eps, grid)[0].J


@dataclass(frozen=True)
class HistoryEntry:
    iter: int
    J_prev: float
    J: float
    eps: float
    feasibility: float
    cost: float
    pool_index: int
    rho: float


@dataclass
class PenaltyState:
    """Incumbent and bookkeeping of the descent."""

    eps: float
    R: float
    u: ControlSignal
    J: float
    cost: float
    feasibility: float
    reference_cost: float
    iterations: int = 0
    budget_exhausted: bool = False
    history: list = field(default_factory=list)

    def history_csv(self):
        rows = [(h.iter, h.J, h.eps, h.feasibility, h.cost) for h in self.history]
        return csvio.dumps(["iter", "J", "eps", "feasibility", "cost"], rows)


def default_pool(problem, grid):
    """Constant controls at the corners, center and edge midpoints of Omega."""
    omega = problem.omega
    pts = [np.asarray(c, dtype=np.float64) for c in omega.corners()]
    pts.append(np.asarray(omega.center(), dtype=np.float64))
    if problem.m <= 3:
        corners = omega.corners()
        for a, b in itertools.combinations(range(len(corners)), 2):
            mid = 0.5 * (corners[a] + corners[b])
            if omega.contains(mid):
                pts.append(mid)
    out, seen = [], set()
    for p in pts:
        key = tuple(np.round(p, 15))
        if key not in seen:
            seen.add(key)
            out.append(ControlSignal.constant(grid, p))
    return out


def ekeland_descend(
    problem,
    u0,
    eps_schedule=DEFAULT_EPS,
    R_schedule=None,
    pool=None,
    rhos=DEFAULT_RHOS,
    budget=500,
    grid=None,
    strict=False,
):
    """Spike-variation descent on the penalized functional.

    Each iteration tries every pool control ``u'`` (with ``|u'|_inf <= R``)
    at every ``rho`` of the ladder, building ``Q_rho`` from
    ``h = f(q, u', t) - f(q, u, t)``.  Among moves passing the Ekeland
    test the one with the lowest ``J`` wins (ties: lowest pool index, then
    ladder position).  When no move passes, ``eps`` advances along its
    schedule, then ``R``.  An accepted move with ``J = 0`` (feasible and
    at least ``eps`` cheaper than the reference) resets the reference cost
    to the new cost.

    Returns
    -------
    u, state
        Final control and :class:`PenaltyState`; ``state.budget_exhausted``
        flags a run stopped by ``budget`` iterations.

    Raises
    ------
    BudgetExhausted
        Only with ``strict=True``; the exception carries ``.state``.
    """
    base = u0.grid if grid is None else grid.union(u0.grid)
    if pool is None:
        pool = default_pool(problem, base)
    else:
        pool = list(pool) + default_pool(problem, base)
    eps_schedule = tuple(float(e) for e in eps_schedule)
    if not eps_schedule or min(eps_schedule) <= 0:
        raise RangeError("eps schedule must be positive")
    if R_schedule is None:
        r0 = max([u0.linf()] + [float(np.max(np.abs(p.values))) for p in pool]) + 1.0
        R_schedule = (r0, 2.0 * r0)
    R_schedule = tuple(float(r) for r in R_schedule)
    if R_schedule[0] <= u0.linf():
        raise RangeError("R must exceed |u0|_inf")
    max_cells = MAX_CELL_FACTOR * base.N

    u = u0
    e_idx, r_idx = 0, 0
    eps, R = eps_schedule[0], R_schedule[0]
    ev, _ = _evaluate(problem, u, 0.0, eps, base)
    ref = ev.cost
    ev, _ = _evaluate(problem, u, ref, eps, base)
    state = PenaltyState(eps=eps, R=R, u=u, J=ev.J, cost=ev.cost, feasibility=ev.feasibility, reference_cost=ref)

    for it in range(1, budget + 1):
        state.iterations = it
        best = None
        slack = math.sqrt(eps)
        for pi, up in enumerate(pool):
            if up.linf() > R:
                continue
            h, _ = perturbation_source(problem, u, up, base)
            if not np.any(h.left) and not np.any(h.mid) and not np.any(h.right):
                continue
            for ri, rho in enumerate(rhos):
                try:
                    Q = build_qrho(h, rho, h.grid)
                except BoundNotAchieved:
                    continue
                cand = spike_control(u, up, Q).coalesce()
                if cand.grid.N > max_cells:
                    continue
                cev, _ = _evaluate(problem, cand, ref, eps, base)
                drop = state.J - cev.J
                if cev.J < state.J and drop > slack * u.l1_distance(cand):
                    key = (cev.J, pi, ri)
                    if best is None or key < best[0]:
                        best = (key, cand, cev, rho)
        if best is None:
            if e_idx + 1 < len(eps_schedule):
                e_idx += 1
                eps = eps_schedule[e_idx]
            elif r_idx + 1 < len(R_schedule):
                r_idx += 1
                R = R_schedule[r_idx]
            else:
                break
            ev, _ = _evaluate(problem, u, ref, eps, base)
            if ev.J == 0.0:
                ref = ev.cost
                ev, _ = _evaluate(problem, u, ref, eps, base)
            state.eps, state.R, state.J, state.reference_cost = eps, R, ev.J, ref
            continue
        (_, pi, _), cand, cev, rho = best
        state.history.append(
            HistoryEntry(
                iter=it,
                J_prev=state.J,
                J=cev.J,
                eps=eps,
                feasibility=cev.feasibility,
                cost=cev.cost,
                pool_index=pi,
                rho=float(rho),
            )
        )
        u = cand
        J = cev.J
        if J == 0.0:
            ref = cev.cost
            J = _evaluate(problem, u, ref, eps, base)[0].J
        state.u, state.J, state.cost, state.feasibility, state.reference_cost = u, J, cev.cost, cev.feasibility, ref
    else:
        state.budget_exhausted = True
        if strict:
            err = BudgetExhausted(f"no convergence within {budget} iterations")
            err.state = state
            raise err
    return u, state


def extract_multipliers(problem, state, grid=None):
    """Multiplier estimates ``(psi, [eta_i])`` at the final iterate.

    ``psi = (cost - ref + eps)^+ / J``.  The constraint part has mass
    ``d_S / J`` placed as atoms at the nodes where a constraint attains the
    sup-norm distance (ties split equally).  The pair is renormalized so
    that ``psi^2 + sum_i V(eta_i)^2 = 1``.

    Raises
    ------
    DegenerateState
        If the final ``J`` is zero.
    """
    g = state.u.grid if grid is None else grid.union(state.u.grid)
    ev, traj = _evaluate(problem, state.u, state.reference_cost, state.eps, g)
    if ev.J == 0.0:
        raise DegenerateState("penalized functional vanishes at the final iterate")
    psi = max(ev.cost - state.reference_cost + state.eps, 0.0) / ev.J
    atoms = np.zeros((problem.j, g.N + 1))
    if problem.j and ev.feasibility > 0.0:
        G = problem.constraints(g.nodes, traj.values)
        d = ev.feasibility
        ties = np.argwhere(G >= d - 1e-12 * max(1.0, d))
        w = (d / ev.J) / len(ties)
        for k, i in ties:
            atoms[i, max(int(k), 1)] += w
    variations = atoms.sum(axis=1)
    scale = math.sqrt(psi * psi + float(np.sum(variations**2)))
    psi /= scale
    etas = [NBVMeasure(g, atoms[i] / scale) for i in range(problem.j)]
    return psi, etas
