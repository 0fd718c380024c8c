import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddelab.quantiles import (
    AtomMixture,
    QuantileTable,
    cdf,
    inverse_cdf,
    project_w1,
    quantile_huber,
    quantile_huber_grad,
    sup_wasserstein,
    wasserstein,
)

ATOMS = np.array([1.0, 2.0, 3.0, 4.0])


def test_cdf_direct_count():
    assert cdf(ATOMS, 2.0) == 0.5


def test_cdf_boundaries():
    assert cdf(ATOMS, 0.5) == 0.0
    assert cdf(ATOMS, 4.0) == 1.0
    assert cdf(ATOMS, 9.0) == 1.0


def test_cdf_mixture():
    mix = AtomMixture(np.array([0.0, 1.0]), np.array([0.3, 0.7]))
    assert mix.cdf(0.5) == 0.3


def test_inverse_cdf_inf_definition():
    assert inverse_cdf(ATOMS, 0.5) == 2.0
    assert inverse_cdf(ATOMS, 0.500001) == 3.0
    assert inverse_cdf(ATOMS, 0.0) == 1.0


def test_inverse_cdf_point_mass():
    for tau in (0.0, 0.3, 1.0):
        assert inverse_cdf(np.array([2.5]), tau) == 2.5


def test_inverse_cdf_rejects_bad_tau():
    with pytest.raises(ValueError):
        inverse_cdf(ATOMS, 1.5)


def test_wasserstein_identity():
    assert wasserstein(ATOMS, ATOMS, 1) == 0.0
    assert wasserstein(ATOMS, ATOMS, math.inf) == 0.0


def test_wasserstein_single_transport():
    for p in (1, 2, math.inf):
        assert np.isclose(wasserstein(np.array([0.0]), np.array([1.0]), p), 1.0)


def test_wasserstein_piecewise_integral():
    # each atom moves by 1: 0.5*1 + 0.5*1
    assert np.isclose(wasserstein(np.array([0.0, 2.0]), np.array([1.0, 3.0]), 1), 1.0)


def test_wasserstein_mismatched_weights():
    a = AtomMixture(np.array([0.0, 1.0]), np.array([0.25, 0.75]))
    b = AtomMixture(np.array([0.0, 1.0]), np.array([0.75, 0.25]))
    # quantile functions differ on tau in (0.25, 0.75]
    assert np.isclose(wasserstein(a, b, 1), 0.5)
    assert np.isclose(wasserstein(a, b, math.inf), 1.0)


def test_wasserstein_rejects_bad_order():
    with pytest.raises(ValueError):
        wasserstein(ATOMS, ATOMS, 0.5)


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_wasserstein_metric_axioms(data):
    rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
    mixtures = []
    for _ in range(3):
        k = rng.integers(1, 6)
        mixtures.append(AtomMixture(rng.normal(size=k), rng.dirichlet(np.ones(k))))
    x, y, z = mixtures
    for p in (1, 2, math.inf):
        dxy = wasserstein(x, y, p)
        assert dxy >= 0
        assert np.isclose(dxy, wasserstein(y, x, p), atol=1e-12)
        assert wasserstein(x, x, p) <= 1e-12
        assert dxy <= wasserstein(x, z, p) + wasserstein(z, y, p) + 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_galois_connection(seed):
    rng = np.random.default_rng(seed)
    k = rng.integers(1, 8)
    mix = AtomMixture(rng.normal(size=k), rng.dirichlet(np.ones(k)))
    for z in mix.values:
        assert mix.inverse_cdf(float(mix.cdf(z))) <= z + 1e-12
    for tau in rng.uniform(0, 1, size=10):
        assert mix.cdf(mix.inverse_cdf(float(tau))) >= tau - 1e-12


def test_project_uniform_m2():
    assert np.allclose(project_w1(lambda t: t, 2), [0.25, 0.75])


def test_project_uniform_m4():
    m = 4
    expected = (np.arange(1, m + 1) - 0.5) / m  # midpoint formula
    assert np.allclose(project_w1(lambda t: t, m), expected)


def test_project_point_mass():
    mix = AtomMixture(np.array([3.3]), np.array([1.0]))
    assert np.allclose(project_w1(mix, 5), np.full(5, 3.3))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_projection_w1_optimality(seed):
    # projection beats 1000 random alternative atom rows in W1
    rng = np.random.default_rng(seed)
    k = int(rng.integers(2, 10))
    target = AtomMixture(rng.normal(size=k), rng.dirichlet(np.ones(k)))
    m = int(rng.integers(1, 6))
    proj = AtomMixture.from_atoms(project_w1(target, m))
    d_proj = wasserstein(target, proj, 1)
    lo, hi = target.values.min(), target.values.max()
    for _ in range(1000):
        alt = AtomMixture.from_atoms(rng.uniform(lo - 0.5, hi + 0.5, size=m))
        assert d_proj <= wasserstein(target, alt, 1) + 1e-12


def test_sup_wasserstein_identity_and_shift():
    rng = np.random.default_rng(0)
    eta = QuantileTable(rng.normal(size=(3, 2, 5)))
    assert sup_wasserstein(eta, eta, math.inf) == 0.0
    shifted = QuantileTable(eta.atoms.copy())
    shifted.atoms[1, 0] += 0.7
    assert np.isclose(sup_wasserstein(eta, shifted, math.inf), 0.7)


def test_sup_wasserstein_dominates_rows():
    rng = np.random.default_rng(1)
    a = QuantileTable(rng.normal(size=(4, 3, 6)))
    b = QuantileTable(rng.normal(size=(4, 3, 6)))
    sup = sup_wasserstein(a, b, 2)
    for s in range(4):
        for ac in range(3):
            assert wasserstein(a.atoms[s, ac], b.atoms[s, ac], 2) <= sup + 1e-12


def test_sup_wasserstein_shape_mismatch():
    a = QuantileTable(np.zeros((2, 2, 3)))
    b = QuantileTable(np.zeros((2, 2, 4)))
    with pytest.raises(ValueError):
        sup_wasserstein(a, b, 1)


def test_quantile_huber_values():
    assert quantile_huber(0.5, 0.0, 1.0) == 0.0
    assert np.isclose(quantile_huber(0.5, 0.5, 1.0), 0.0625)
    assert np.isclose(quantile_huber(0.9, -2.0, 1.0), 0.15)


def test_quantile_huber_rejects_bad_kappa():
    with pytest.raises(ValueError):
        quantile_huber(0.5, 1.0, 0.0)


@settings(max_examples=100, deadline=None)
@given(
    st.floats(0.0, 1.0),
    st.floats(-3.0, 3.0),
    st.floats(0.05, 2.0),
)
def test_quantile_huber_grad_matches_fd(tau, u, kappa):
    # subgradient vs central differences away from the kinks
    h = 1e-6
    if min(abs(u), abs(abs(u) - kappa)) < 1e-3:
        return
    fd = (quantile_huber(tau, u + h, kappa) - quantile_huber(tau, u - h, kappa)) / (2 * h)
    assert abs(quantile_huber_grad(tau, u, kappa) - fd) <= 1e-5


def test_quantile_table_canonical_sort():
    table = QuantileTable(np.array([[[3.0, 1.0, 2.0]]]))
    assert np.array_equal(table.atoms[0, 0], [1.0, 2.0, 3.0])


def test_quantile_table_tau_grids():
    table = QuantileTable(np.zeros((1, 1, 4)))
    assert np.allclose(table.tau_levels, [0.25, 0.5, 0.75, 1.0])
    assert np.allclose(table.tau_hats, [0.125, 0.375, 0.625, 0.875])


def test_quantile_table_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(5)
    table = QuantileTable(rng.normal(size=(2, 3, 4)))
    path = tmp_path / "table.csv"
    table.save_csv(path)
    assert path.read_text().splitlines()[0] == "# M=4"
    loaded = QuantileTable.load_csv(path)
    assert np.array_equal(loaded.atoms, table.atoms)
