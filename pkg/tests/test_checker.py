import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmpkit.bv import BVPath, NBVMeasure, TimeGrid
from pmpkit.checker import (
    Candidate,
    Tolerances,
    assemble_adjoint,
    check_certificate,
    hamiltonian_residual,
    minimize_hamiltonian,
    slackness_parts,
    slackness_residual,
)
from pmpkit.errors import UnsupportedOmega
from pmpkit.ode import ControlSignal, duhamel_linear, linearize, solve_forward
from pmpkit.problem import Ball, Box, FiniteSet, load_problem

from .conftest import BRYSON_CONFIG, LQR_CONFIG


def scalar(f, G=(), q0=0.0, T=1.0, lo=-1.0, hi=1.0):
    return load_problem(
        dict(n=1, m=1, f=[f], psi="q1", G=list(G), omega=dict(type="box", lo=[lo], hi=[hi]), q0=[q0], T=T)
    )


def test_adjoint_of_integrator_is_constant():
    g = TimeGrid.uniform(20, 1.0)
    p = assemble_adjoint(scalar("u1"), Candidate(ControlSignal.constant(g, 0.3), 1.0))
    assert np.allclose(p.right, 1.0, atol=1e-15) and np.allclose(p.left, 1.0, atol=1e-15)


def test_adjoint_exponential():
    g = TimeGrid.uniform(200, 1.0)
    p = assemble_adjoint(scalar("q1+u1"), Candidate(ControlSignal.constant(g, 0.0), 1.0))
    assert np.max(np.abs(p.right[:, 0] - np.exp(1 - g.nodes))) <= 1e-6


def test_adjoint_jumps_at_terminal_atom():
    g = TimeGrid.uniform(10, 1.0)
    problem = scalar("u1", G=["q1 - 5"])
    p = assemble_adjoint(problem, Candidate(ControlSignal.constant(g, 0.0), 0.0, (NBVMeasure.atom(g, 1.0),)))
    assert p.right[-1, 0] == 0.0
    assert p.left[-1, 0] == pytest.approx(1.0, abs=1e-15)
    assert np.allclose(p.right[:-1, 0], 1.0, atol=1e-15)


def test_hamiltonian_residual_examples():
    g = TimeGrid.uniform(10, 1.0)
    problem = scalar("u1")
    ones = BVPath.continuous(g, np.ones((11, 1)))
    for u, expected in ((-1.0, 0.0), (0.0, 1.0)):
        uc = ControlSignal.constant(g, u)
        sup, l1, table = hamiltonian_residual(problem, solve_forward(problem, uc), uc, ones)
        assert sup == pytest.approx(expected, abs=1e-12)
        assert l1 == pytest.approx(expected, abs=1e-12)
        assert np.allclose(table["residual"], expected, atol=1e-12)
        assert np.allclose(table["argmin"], -1.0)


def test_hamiltonian_residual_uses_sign_of_costate():
    g = TimeGrid.uniform(100, 1.0)
    problem = scalar("q1+u1")
    u = ControlSignal.constant(g, -1.0)
    p = assemble_adjoint(problem, Candidate(u, 1.0))
    assert np.all(p.left > 0)
    sup, _, table = hamiltonian_residual(problem, solve_forward(problem, u), u, p)
    assert sup <= 1e-12 and np.allclose(table["argmin"], -1.0)


def linear_H(c):
    c = np.asarray(c, dtype=float)
    return lambda v: v @ c


def test_minimize_over_control_sets():
    v, best = minimize_hamiltonian(linear_H([1.0, -2.0]), FiniteSet(((0.0, 0.0), (1.0, 1.0), (-1.0, 0.0))), 3)
    assert np.allclose(v, [1.0, 1.0]) and np.allclose(best, -1.0)
    v, best = minimize_hamiltonian(lambda v: np.sum((v - 0.123) ** 2, axis=1), Box((-1.0, -1.0), (1.0, 1.0)), 2)
    assert np.allclose(v, 0.123, atol=1e-6) and np.all(best <= 1e-11)
    v, best = minimize_hamiltonian(linear_H([3.0, 4.0]), Ball((1.0, 0.0), 2.0), 1)
    exact = 3.0 - 2.0 * 5.0
    assert exact <= best[0] <= exact + 2.0 * 5.0 * (1 - np.cos(np.pi / 64)) + 1e-12
    v, best = minimize_hamiltonian(linear_H([-1.0]), Ball((0.0,), 0.5), 1)
    assert v[0, 0] == pytest.approx(0.5, abs=1e-6)
    with pytest.raises(UnsupportedOmega):
        minimize_hamiltonian(linear_H([1.0, 1.0, 1.0]), Ball((0.0, 0.0, 0.0), 1.0), 1)


def test_slackness_examples():
    g = TimeGrid.uniform(20, 1.0)
    off = scalar("0*u1", G=["q1 - 1"])
    u = ControlSignal.constant(g, 0.0)
    traj = solve_forward(off, u)
    assert slackness_residual(off, traj, [NBVMeasure.zero(g)]) == [0.0]
    assert slackness_residual(off, traj, [NBVMeasure.atom(g, 0.35)])[0] == pytest.approx(1.0, abs=1e-15)
    contact = scalar("u1", G=["q1 - 0.5"])
    traj = solve_forward(contact, ControlSignal.constant(g, 1.0))
    assert slackness_residual(contact, traj, [NBVMeasure.atom(g, 0.5)])[0] <= 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_slackness_hides_no_cancellation(seed):
    rng = np.random.default_rng(seed)
    g = TimeGrid.uniform(30, 1.0)
    problem = scalar("u1", G=["q1 - 0.4"])
    traj = solve_forward(problem, ControlSignal(g, rng.uniform(-1, 1, size=(30, 1))))
    atoms = np.where(rng.random(31) < 0.3, rng.random(31), 0.0)
    atoms[0] = 0.0
    eta = [NBVMeasure(g, atoms, rng.random(30))]
    (pos, neg), = slackness_parts(problem, traj, eta)
    assert pos >= 0 and neg >= 0
    assert slackness_residual(problem, traj, eta)[0] == pytest.approx(abs(pos - neg), abs=1e-13)


def random_bryson_candidate(rng, g):
    u = ControlSignal(g, rng.uniform(-3, 3, size=(g.N, 1)))
    atoms = np.where(rng.random(g.N + 1) < 0.2, rng.random(g.N + 1), 0.0)
    atoms[0] = 0.0
    return u, NBVMeasure(g, atoms, rng.random(g.N))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 3.0))
def test_transversality_holds_by_construction(seed, psi):
    rng = np.random.default_rng(seed)
    problem = load_problem(BRYSON_CONFIG)
    g = TimeGrid.uniform(40, 1.0)
    u, eta = random_bryson_candidate(rng, g)
    cert = check_certificate(problem, Candidate(u, psi, (eta,)))
    assert cert.condition("transversality").value <= 1e-10


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0.5, 2.0]))
def test_scaling_covariance(seed, c):
    rng = np.random.default_rng(seed)
    problem = load_problem(dict(BRYSON_CONFIG, f=["q2", "u1 + sin(q1)", "u1^2/2 + q2*u1"]))
    g = TimeGrid.uniform(40, 1.0)
    u, eta = random_bryson_candidate(rng, g)
    psi = float(rng.uniform(0.1, 2.0))
    a = check_certificate(problem, Candidate(u, psi, (eta,)))
    b = check_certificate(problem, Candidate(u, c * psi, (eta.scaled(c),)))
    assert np.array_equal(a.hamiltonian_table["argmin"], b.hamiltonian_table["argmin"])
    pa = assemble_adjoint(problem, Candidate(u, psi, (eta,)))
    pb = assemble_adjoint(problem, Candidate(u, c * psi, (eta.scaled(c),)))
    assert np.allclose(pb.right, c * pa.right, rtol=1e-12, atol=1e-14)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_unconstrained_adjoint_is_classical(seed):
    lqr_problem = load_problem(LQR_CONFIG)
    rng = np.random.default_rng(seed)
    g = TimeGrid.uniform(50, 1.0)
    u = ControlSignal(g, rng.uniform(-2, 2, size=(50, 1)))
    p = assemble_adjoint(lqr_problem, Candidate(u, 1.5))
    traj = solve_forward(lqr_problem, u)
    A = linearize(lqr_problem, traj, u)
    classical = duhamel_linear(A, np.zeros(2), 1.5 * lqr_problem.terminal_gradient(traj.final), "backward", g)
    assert np.max(np.abs(p.right - classical.values)) <= 1e-10
    assert np.array_equal(p.left, p.right)


def test_lqr_perturbation_fails_locally(lqr_problem, lqr_oracle):
    g = lqr_oracle.grid
    bump = np.where((g.mids >= 0.2) & (g.mids < 0.4), 0.3, 0.0)[:, None]
    cert = check_certificate(lqr_problem, Candidate(ControlSignal(g, lqr_oracle.values + bump), 1.0))
    assert cert.verdict == "FAIL"
    assert not cert.condition("hamiltonian").passed
    table = cert.hamiltonian_table
    inside = (table["t"] >= 0.2) & (table["t"] < 0.4)
    # the costate responds globally, but the pointwise violation sits on the bump
    assert np.min(table["residual"][inside]) >= 5 * np.max(table["residual"][~inside])
    t_max = float(cert.condition("hamiltonian").detail.split("t=")[1])
    assert 0.2 <= t_max < 0.4


def test_zero_multipliers_fail_nontriviality(lqr_problem, lqr_oracle):
    cert = check_certificate(lqr_problem, Candidate(lqr_oracle, 0.0))
    assert cert.verdict == "FAIL"
    assert not cert.condition("nontriviality").passed
    assert cert.condition("nontriviality").value == 0.0


def test_tolerances_decide_verdict(lqr_problem, lqr_oracle):
    loose = check_certificate(lqr_problem, Candidate(lqr_oracle, 1.0))
    assert loose.verdict == "PASS"
    tight = check_certificate(lqr_problem, Candidate(lqr_oracle, 1.0), Tolerances(hamiltonian=1e-15))
    assert tight.verdict == "FAIL"
    with pytest.raises(ValueError):
        Tolerances(slackness=0.0)


def test_monotone_measures_are_reported():
    g = TimeGrid.uniform(10, 1.0)
    problem = scalar("u1", G=["q1 - 5"])
    cert = check_certificate(problem, Candidate(ControlSignal.constant(g, 0.0), 1.0, (NBVMeasure.atom(g, 0.5),)))
    assert cert.condition("monotone[1]").passed
    with pytest.raises(ValueError):
        NBVMeasure.atom(g, 0.5, -1.0)


def test_solver_errors_give_error_verdict():
    g = TimeGrid.uniform(50, 2.0)
    cert = check_certificate(scalar("q1^2", q0=1.0, T=2.0), Candidate(ControlSignal.constant(g, 0.0), 1.0))
    assert cert.verdict == "ERROR" and "BlowUp" in cert.error
    wrong = check_certificate(scalar("u1"), Candidate(ControlSignal.constant(g, 0.0), 1.0, (NBVMeasure.zero(g),)))
    assert wrong.verdict == "ERROR"
    with pytest.raises(ValueError):
        Candidate(ControlSignal.constant(g, 0.0), -1.0)
