import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmpkit.bv import (
    BVPath,
    CellFunction,
    NBVMeasure,
    TimeGrid,
    fubini_residual,
    measures_from_csv,
    measures_to_csv,
    normalize_bv,
    stieltjes_integral,
    total_variation,
)
from pmpkit.errors import GridMismatch, RangeError

# --------------------------------------------------------------------------
# TimeGrid
# --------------------------------------------------------------------------


def test_grid_validation():
    with pytest.raises(ValueError):
        TimeGrid([0.0])
    with pytest.raises(ValueError):
        TimeGrid([0.1, 1.0])
    with pytest.raises(ValueError):
        TimeGrid([0.0, 0.5, 0.5, 1.0])
    g = TimeGrid.uniform(4, 2.0)
    assert g.T == 2.0 and g.N == 4 and np.allclose(g.h, 0.5)


def test_union_keeps_nodes_and_merges_near_duplicates():
    g = TimeGrid.uniform(4, 1.0)
    u = g.union([0.3, 0.25 + 1e-15, 0.3 + 1e-15, 1.0])
    assert np.array_equal(u.nodes, [0.0, 0.25, 0.3, 0.5, 0.75, 1.0])
    assert u.refines(g)
    assert g.union([0.5]) is g
    with pytest.raises(RangeError):
        g.union([1.5])


def test_refine_and_parent_cells():
    g = TimeGrid([0.0, 0.2, 1.0])
    f = g.refine(3)
    assert f.N == 6 and f.refines(g)
    assert np.array_equal(f.parent_cells(g), [0, 0, 0, 1, 1, 1])
    assert not g.refines(f)
    with pytest.raises(GridMismatch):
        g.indices_in(TimeGrid.uniform(3, 1.0))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 1.0, allow_nan=False), max_size=30), st.integers(1, 20))
def test_union_contains_every_point(points, N):
    g = TimeGrid.uniform(N, 1.0)
    u = g.union(points)
    assert u.refines(g)
    assert u.nodes[0] == 0.0 and u.nodes[-1] == 1.0
    for p in points:
        assert np.min(np.abs(u.nodes - p)) <= 1e-12


# --------------------------------------------------------------------------
# Paths and variation
# --------------------------------------------------------------------------


def test_total_variation_examples():
    g = TimeGrid.uniform(10, 1.0)
    assert total_variation(BVPath.continuous(g, g.nodes)) == pytest.approx(1.0, abs=1e-15)
    step = np.where(g.nodes >= 0.5, 1.0, 0.0)
    left = np.where(g.nodes > 0.5, 1.0, 0.0)
    assert total_variation(BVPath(g, left, step)) == 1.0
    saw = np.minimum(g.nodes, 1.0 - g.nodes) * 2.0
    assert total_variation(BVPath.continuous(g, saw)) == pytest.approx(2.0, abs=1e-14)


def test_normalize_examples():
    g = TimeGrid.uniform(10, 1.0)
    eta = NBVMeasure.from_density(g, np.ones(10)).to_path()
    again = normalize_bv(eta)
    assert np.array_equal(again.left, eta.left) and np.array_equal(again.right, eta.right)
    shifted = normalize_bv(BVPath.continuous(g, 1.0 + g.nodes))
    assert np.allclose(shifted.values()[:, 0], g.nodes)
    # right-continuous unit step at 0.5 becomes the left-continuous one
    left = np.where(g.nodes > 0.5, 1.0, 0.0)
    right = np.where(g.nodes >= 0.5, 1.0, 0.0)
    rc = BVPath(g, left, right, continuity="right")
    lc = normalize_bv(rc)
    assert lc.continuity == "left" and lc(0.5)[0] == 0.0 and rc(0.5)[0] == 1.0
    z = g.nodes
    assert stieltjes_integral(z, NBVMeasure.from_path(lc)) == pytest.approx(0.5, abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.data())
def test_sup_norm_bounded_by_bv_norm(N, data):
    g = TimeGrid.uniform(N, 1.0)
    vals = st.floats(-5.0, 5.0, allow_nan=False)
    left = np.array(data.draw(st.lists(vals, min_size=N + 1, max_size=N + 1)))
    right = np.array(data.draw(st.lists(vals, min_size=N + 1, max_size=N + 1)))
    right[0] = left[0]
    p = BVPath(g, left, right)
    assert p.sup_norm() <= abs(right[0]) + total_variation(p) + 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.data())
def test_monotone_measure_variation(N, data):
    g = TimeGrid.uniform(N, 2.0)
    w = st.floats(0.0, 3.0, allow_nan=False)
    atoms = [0.0] + data.draw(st.lists(w, min_size=N, max_size=N))
    dens = data.draw(st.lists(w, min_size=N, max_size=N))
    mu = NBVMeasure(g, atoms, dens)
    path = mu.to_path()
    tv = total_variation(path)
    assert tv == pytest.approx(path.right[-1, 0] - path.right[0, 0], rel=1e-14, abs=1e-14)
    assert tv == pytest.approx(mu.total_mass(), rel=1e-14, abs=1e-14)
    back = NBVMeasure.from_path(path)
    assert np.allclose(back.atoms, mu.atoms) and np.allclose(back.densities, mu.densities)


def test_measure_validation():
    g = TimeGrid.uniform(4, 1.0)
    with pytest.raises(ValueError):
        NBVMeasure(g, [1.0, 0, 0, 0, 0])
    with pytest.raises(ValueError):
        NBVMeasure(g, densities=[-1.0, 0, 0, 0])
    with pytest.raises(GridMismatch):
        NBVMeasure.atom(g, 0.3)
    with pytest.raises(GridMismatch):
        NBVMeasure(g, [0.0, 1.0])


# --------------------------------------------------------------------------
# Stieltjes quadrature
# --------------------------------------------------------------------------


def test_stieltjes_examples():
    g = TimeGrid.uniform(10, 1.0)
    assert stieltjes_integral(np.ones(11), NBVMeasure.atom(g, 0.5)) == 1.0
    assert stieltjes_integral(g.nodes, NBVMeasure.from_density(g, np.ones(10))) == pytest.approx(0.5, abs=1e-10)
    fine = TimeGrid.uniform(1000, 1.0)
    mu = NBVMeasure.from_density(fine, 2.0 * fine.mids)
    assert stieltjes_integral(fine.nodes**2, mu) == pytest.approx(0.5, abs=1e-6)


def test_atom_convention():
    g = TimeGrid.uniform(4, 1.0)
    mu = NBVMeasure.atom(g, 0.5, 2.0)
    z = np.ones(5)
    assert stieltjes_integral(z, mu, 0.0, 0.5) == 2.0  # right end owns the atom
    assert stieltjes_integral(z, mu, 0.5, 1.0) == 0.0  # left end does not
    end = NBVMeasure.atom(g, 1.0, 3.0)
    for s in (0.0, 0.25, 0.75):
        assert stieltjes_integral(z, end, s, 1.0) == 3.0


def test_range_errors():
    g = TimeGrid.uniform(4, 1.0)
    mu = NBVMeasure.zero(g)
    with pytest.raises(RangeError):
        stieltjes_integral(np.ones(5), mu, -0.1, 1.0)
    with pytest.raises(RangeError):
        stieltjes_integral(np.ones(5), mu, 0.0, 1.5)
    with pytest.raises(RangeError):
        stieltjes_integral(np.ones(5), mu, 0.6, 0.5)


def _random_measure(rng, g):
    atoms = np.where(rng.random(g.N + 1) < 0.3, rng.random(g.N + 1), 0.0)
    atoms[0] = 0.0
    return NBVMeasure(g, atoms, rng.random(g.N))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-3.0, 3.0, allow_nan=False))
def test_stieltjes_linearity(seed, alpha):
    rng = np.random.default_rng(seed)
    g = TimeGrid.uniform(20, 1.0)
    mu = _random_measure(rng, g)
    z1 = CellFunction(g, *rng.normal(size=(3, 20)))
    z2 = CellFunction(g, *rng.normal(size=(3, 20)))
    comb = CellFunction(g, alpha * z1.left + z2.left, alpha * z1.mid + z2.mid, alpha * z1.right + z2.right)
    lhs = stieltjes_integral(comb, mu)
    rhs = alpha * stieltjes_integral(z1, mu) + stieltjes_integral(z2, mu)
    assert abs(lhs - rhs) <= 1e-12 * (1 + abs(alpha)) * 20


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 20), st.integers(0, 20), st.floats(0.0, 1.0))
def test_stieltjes_additivity(seed, i, j, frac):
    rng = np.random.default_rng(seed)
    g = TimeGrid.uniform(20, 1.0)
    mu = _random_measure(rng, g)
    z = g.nodes**2 - np.sin(3 * g.nodes)
    a, c = sorted((g.nodes[i], g.nodes[j]))
    b = a + frac * (c - a)
    whole = stieltjes_integral(z, mu, a, c)
    parts = stieltjes_integral(z, mu, a, b) + stieltjes_integral(z, mu, b, c)
    assert abs(whole - parts) <= 1e-14


def test_vector_integrand_componentwise():
    g = TimeGrid.uniform(50, 1.0)
    rng = np.random.default_rng(3)
    mu = _random_measure(rng, g)
    A = rng.normal(size=(51, 2, 3))
    full = stieltjes_integral(A, mu)
    for r in range(2):
        for c in range(3):
            assert full[r, c] == pytest.approx(stieltjes_integral(A[:, r, c], mu), abs=1e-14)
    # <z, int A x d eta> equals int <z, A> d eta for constant z
    z = np.array([0.5, -2.0])
    assert np.allclose(z @ full, stieltjes_integral(np.einsum("r,krc->kc", z, A), mu), atol=1e-13)


def test_measure_csv_round_trip():
    g = TimeGrid.uniform(5, 1.0)
    rng = np.random.default_rng(4)
    ms = [_random_measure(rng, g), _random_measure(rng, g)]
    back = measures_from_csv(measures_to_csv(ms))
    for a, b in zip(ms, back):
        assert np.array_equal(a.atoms, b.atoms) and np.array_equal(a.densities, b.densities)
    one = NBVMeasure.from_csv(ms[0].to_csv())
    assert np.array_equal(one.atoms, ms[0].atoms)
    assert ms[0].to_csv().splitlines()[0] == "t,atom,density"


def test_path_csv_round_trip():
    g = TimeGrid.uniform(5, 1.0)
    p = NBVMeasure.atom(g, 0.4, 2.0).to_path()
    q = BVPath.from_csv(p.to_csv("eta"))
    assert np.array_equal(q.left, p.left) and np.array_equal(q.right, p.right)


def test_resample_preserves_integrals():
    g = TimeGrid.uniform(8, 1.0)
    mu = _random_measure(np.random.default_rng(5), g)
    fine = g.refine(4)
    z = lambda t: np.cos(t)  # noqa: E731
    a = stieltjes_integral(CellFunction.from_function(g, z), mu)
    b = stieltjes_integral(CellFunction.from_function(fine, z), mu.resample(fine))
    assert a == pytest.approx(b, abs=1e-6)
    assert mu.resample(fine).total_mass() == pytest.approx(mu.total_mass(), abs=1e-15)


# --------------------------------------------------------------------------
# Fubini exchange
# --------------------------------------------------------------------------


def test_fubini_examples():
    g = TimeGrid.uniform(50, 1.0)
    assert fubini_residual(np.zeros((51, 51)), NBVMeasure.from_density(g, np.ones(50))) == 0.0
    assert fubini_residual(np.ones((51, 51)), NBVMeasure.atom(g, 1.0)) <= 1e-15
    t = TimeGrid.uniform(1000, 1.0).nodes
    assert fubini_residual(np.outer(t, t), NBVMeasure.from_density(TimeGrid.uniform(1000, 1.0), np.ones(1000))) <= 1e-6


def test_fubini_residual_at_most_first_order():
    def run(N):
        g = TimeGrid.uniform(N, 1.0)
        t = g.nodes
        phi = np.sin(np.add.outer(t, 2 * t)) + np.outer(t, t**2)
        return fubini_residual(phi, NBVMeasure.from_density(g, 1.0 + g.mids))

    rs = [run(N) for N in (50, 100, 200)]
    assert all(r * N <= rs[0] * 50 * 1.01 for r, N in zip(rs, (50, 100, 200)))


def test_fubini_with_atoms_and_several_measures():
    g = TimeGrid.uniform(40, 1.0)
    rng = np.random.default_rng(6)
    ms = [_random_measure(rng, g), _random_measure(rng, g)]
    t = g.nodes
    phi = np.stack([np.add.outer(t, t), np.cos(np.subtract.outer(t, t))], axis=-1)
    assert fubini_residual(phi, ms) <= 1e-3
    with pytest.raises(GridMismatch):
        fubini_residual(np.zeros((3, 3)), ms)
    assert math.isfinite(fubini_residual(phi[:, :, 0], ms[0]))
