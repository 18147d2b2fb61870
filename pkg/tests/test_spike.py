import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmpkit.bv import TimeGrid
from pmpkit.errors import BoundNotAchieved, RangeError
from pmpkit.ode import ControlSignal
from pmpkit.problem import load_problem
from pmpkit.spike import (
    SpikeSet,
    build_qrho,
    deviation_sup,
    differentiability_probe,
    probe_to_csv,
    spike_control,
    variation_vector,
)


def scalar(f, q0=0.0, T=1.0):
    return load_problem(dict(n=1, m=1, f=[f], psi="q1", omega=dict(type="box", lo=[-2], hi=[2]), q0=[q0], T=T))


def test_zero_h_any_selection():
    g = TimeGrid.uniform(10, 1.0)
    Q = build_qrho(np.zeros(10), 0.3, g)
    assert abs(Q.measure() - 0.3) <= 1e-14
    assert deviation_sup(np.zeros(10), Q, g) == 0.0


def test_constant_h_half():
    g = TimeGrid.uniform(4, 1.0)
    Q = build_qrho(np.ones(4), 0.5, g)
    assert Q.measure() == pytest.approx(0.5, abs=1e-14)
    assert deviation_sup(np.ones(4), Q, g) <= 0.5


def test_linear_h_quarter():
    g = TimeGrid.uniform(20, 1.0)
    Q = build_qrho(lambda t: t, 0.25, g)
    assert abs(Q.measure() - 0.25) <= 1e-14
    assert deviation_sup(lambda t: t, Q, g) <= 0.25


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.02, 0.95), st.floats(0.5, 3.0))
def test_measure_is_exact_and_bound_holds(seed, rho, T):
    rng = np.random.default_rng(seed)
    N = int(rng.integers(3, 40))
    g = TimeGrid(np.sort(np.concatenate([[0.0, T], rng.uniform(0.0, T, N - 1)])))
    h = rng.normal(scale=3.0, size=(g.N, 2))
    Q = build_qrho(h, rho, g)
    assert abs(Q.measure() - rho * T) <= 1e-14 * T
    assert np.all(Q.intervals >= 0) and np.all(Q.intervals <= T)
    assert np.all(Q.intervals[1:, 0] >= Q.intervals[:-1, 1])
    assert deviation_sup(h, Q, g) <= rho


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.9))
def test_spiked_control_stays_close_in_l1(seed, rho):
    rng = np.random.default_rng(seed)
    g = TimeGrid.uniform(25, 2.0)
    u = ControlSignal(g, rng.uniform(-1, 1, size=(25, 1)))
    up = ControlSignal(g, rng.uniform(-2, 2, size=(25, 1)))
    Q = build_qrho(rng.normal(size=25), rho, g)
    spiked = spike_control(u, up, Q)
    R = max(u.linf(), up.linf())
    assert spiked.l1_distance(u) <= 2 * R * 2.0 * rho * (1 + 1e-12)


def test_rho_out_of_range():
    g = TimeGrid.uniform(5, 1.0)
    for rho in (0.0, 1.0, -0.2, 1.5):
        with pytest.raises(RangeError):
            build_qrho(np.ones(5), rho, g)


def test_pathological_sampling_reports_failure():
    g = TimeGrid.uniform(2, 1.0)
    for h in (np.array([1e300, 0.0]), np.array([np.inf, 0.0])):
        with pytest.raises(BoundNotAchieved):
            build_qrho(h, 0.5, g)


def test_spike_set_validation():
    with pytest.raises(RangeError):
        SpikeSet(0.5, 1.0, [[0.2, 0.1]])
    with pytest.raises(RangeError):
        SpikeSet(0.5, 1.0, [[0.0, 0.4], [0.3, 0.5]])
    with pytest.raises(RangeError):
        SpikeSet(0.5, 1.0, [[0.7, 1.2]])
    Q = SpikeSet(0.5, 1.0, [[0.0, 0.25], [0.5, 0.75]])
    assert np.array_equal(Q.contains([0.1, 0.3, 0.6, 0.9]), [True, False, True, False])
    assert SpikeSet.empty(1.0).measure() == 0.0


def test_spike_control_examples():
    g = TimeGrid.uniform(10, 1.0)
    u, up = ControlSignal.constant(g, 0.0), ControlSignal.constant(g, 1.0)
    assert np.array_equal(spike_control(u, up, SpikeSet.empty(1.0)).values, u.values)
    ind = spike_control(u, up, SpikeSet(0.5, 1.0, [[0.0, 0.5]]))
    assert np.array_equal(ind.values[:, 0], np.where(ind.grid.mids < 0.5, 1.0, 0.0))
    Q = build_qrho(np.ones(10), 0.999, g)
    nearly = spike_control(u, up, Q)
    assert nearly.l1_norm() == pytest.approx(0.999, abs=1e-12)


def test_spike_control_is_exact_off_grid():
    g = TimeGrid.uniform(4, 1.0)
    Q = SpikeSet(0.1, 1.0, [[0.33, 0.43]])
    s = spike_control(ControlSignal.constant(g, 0.0), ControlSignal.constant(g, 1.0), Q)
    assert s.l1_norm() == pytest.approx(0.1, abs=1e-15)


def test_variation_vector_examples():
    g = TimeGrid.uniform(200, 1.0)
    u0, u1 = ControlSignal.constant(g, 0.0), ControlSignal.constant(g, 1.0)
    w = variation_vector(scalar("u1"), u0, u1)
    assert np.allclose(w.values[:, 0], g.nodes, atol=1e-14)
    assert np.array_equal(variation_vector(scalar("q1*u1", 1.0), u1, u1).values, np.zeros((201, 1)))
    w = variation_vector(scalar("q1+u1"), u0, u1)
    assert np.max(np.abs(w.values[:, 0] - (np.exp(g.nodes) - 1))) <= 1e-6


def test_probe_examples():
    g = TimeGrid.uniform(50, 1.0)
    rhos = [0.2, 0.1, 0.05, 0.025]
    same = differentiability_probe(scalar("q1*u1", 1.0), ControlSignal.constant(g, 0.5),
                                   ControlSignal.constant(g, 0.5), rhos)
    assert all(err <= 1e-10 for _, err in same)
    affine = differentiability_probe(scalar("u1"), ControlSignal.constant(g, 0.0), ControlSignal.constant(g, 1.0), rhos)
    assert all(err <= rho for rho, err in affine)
    rows = differentiability_probe(scalar("q1*u1", 1.0), ControlSignal.constant(g, 0.5),
                                   ControlSignal.constant(g, 1.0), rhos)
    errs = [err for _, err in rows]
    assert all(a >= b for a, b in zip(errs, errs[1:]))
    assert max(err / rho for rho, err in rows) <= 10.0
    assert probe_to_csv(rows).splitlines()[0] == "rho,err"


def test_probe_on_nonlinear_problem_has_bounded_ratio():
    p = load_problem(dict(n=2, m=1, f=["q2", "-sin(q1) + u1"], psi="q1",
                          omega=dict(type="box", lo=[-1], hi=[1]), q0=[0.5, 0], T=2))
    g = TimeGrid.uniform(80, 2.0)
    u = ControlSignal.from_function(g, lambda t: 0.5 * np.cos(t)[:, None])
    rows = differentiability_probe(p, u, ControlSignal.constant(g, -1.0), [0.2, 0.1, 0.05, 0.025])
    errs = [err for _, err in rows]
    assert all(a >= b for a, b in zip(errs, errs[1:]))
    assert all(math.isfinite(e / r) and e / r <= 20.0 for r, e in rows)
