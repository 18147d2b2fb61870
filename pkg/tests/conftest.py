"""Shared problems and independent oracles.

The oracles here use scipy and cvxpy only; they never call pmpkit solvers.
"""

import numpy as np
import pytest

from pmpkit.bv import NBVMeasure, TimeGrid
from pmpkit.ode import ControlSignal
from pmpkit.problem import load_problem

LQR_CONFIG = dict(
    n=2,
    m=1,
    f=["q1 + u1", "(q1^2 + u1^2)/2"],
    psi="q2",
    omega=dict(type="box", lo=[-5], hi=[5]),
    q0=[1, 0],
    T=1,
)

# Free-terminal double integrator with the state bound x <= 1/9 and energy cost.
# The unconstrained optimum u = 0 is infeasible; the optimum touches the bound
# once at t = 1/3 (u = -6 + 18 t before, u = 0 after) with cost 2 and a single
# multiplier atom of mass 18.
BRYSON_CONFIG = dict(
    n=3,
    m=1,
    f=["q2", "u1", "u1^2/2"],
    psi="q3",
    G=["q1 - 1/9"],
    omega=dict(type="box", lo=[-10], hi=[10]),
    q0=[0, 1, 0],
    T=1,
)

INTEGRATOR_CONFIG = dict(
    n=1,
    m=1,
    f=["u1"],
    psi="q1",
    omega=dict(type="box", lo=[-1], hi=[1]),
    q0=[0],
    T=1,
)


def riccati_oracle(N=2000):
    """Optimal LQR control ``u = -P x`` at cell midpoints from scipy's integrator."""
    from scipy.integrate import solve_ivp

    grid = TimeGrid.uniform(N, 1.0)
    ric = solve_ivp(lambda t, P: -(2 * P - P**2 + 1), [1, 0], [0.0], dense_output=True, rtol=1e-12, atol=1e-12)
    closed = solve_ivp(
        lambda t, x: (1 - ric.sol(t)[0]) * x, [0, 1], [1.0], dense_output=True, rtol=1e-12, atol=1e-12
    )
    tm = grid.mids
    u = -ric.sol(tm)[0] * closed.sol(tm)[0]
    return grid, u


def collocation_oracle(N=999):
    """Dense discretize-then-optimize solution of the state-constrained problem.

    Exact zero-order-hold double integrator dynamics; the duals of the node
    constraints ``x_k <= 1/9`` become multiplier atoms.
    """
    import cvxpy as cp

    grid = TimeGrid.uniform(N, 1.0)
    h = 1.0 / N
    u = cp.Variable(N)
    x = cp.Variable(N + 1)
    v = cp.Variable(N + 1)
    cons = [
        x[0] == 0,
        v[0] == 1,
        x[1:] == x[:-1] + h * v[:-1] + h * h / 2 * u,
        v[1:] == v[:-1] + h * u,
        u <= 10,
        u >= -10,
    ]
    state = x[1:] <= 1.0 / 9.0
    prob = cp.Problem(cp.Minimize(h * cp.sum_squares(u) / 2), cons + [state])
    prob.solve(solver=cp.CLARABEL)
    atoms = np.r_[0.0, np.maximum(state.dual_value, 0.0)]
    return grid, np.asarray(u.value), NBVMeasure(grid, atoms), float(prob.value)


@pytest.fixture(scope="session")
def lqr_problem():
    return load_problem(LQR_CONFIG)


@pytest.fixture(scope="session")
def lqr_oracle():
    grid, u = riccati_oracle()
    return ControlSignal(grid, u)


@pytest.fixture(scope="session")
def bryson_problem():
    return load_problem(BRYSON_CONFIG)


@pytest.fixture(scope="session")
def bryson_oracle():
    grid, u, eta, cost = collocation_oracle()
    return ControlSignal(grid, u), eta, cost


@pytest.fixture(scope="session")
def integrator_problem():
    return load_problem(INTEGRATOR_CONFIG)


# --------------------------------------------------------------------------
# Acceptance summary
# --------------------------------------------------------------------------

_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record ``(number, passed, detail)`` for the end-of-run summary."""

    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _CRITERIA[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[k])
