import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pgf_disentangle.model import (
    Determinantal,
    GroundSpace,
    IntensityMeasure,
    Kernel,
    Poisson,
    TestFunction,
)
from pgf_disentangle.pgf import (
    BlackBox,
    EmptyBatch,
    Empirical,
    ExactDpp,
    ExactPoisson,
    ExactProduct,
    VarianceWarning,
    evaluate_entire,
    oracle_for_model,
    pgf_dpp,
    pgf_empirical,
    pgf_poisson,
    pgf_superposition,
)
from pgf_disentangle.samplers import RngState, SampleBatch, sample_batch

from conftest import WORKED_K, WORKED_NU, random_kernel


def test_poisson_examples(space2):
    nu = IntensityMeasure(space2, WORKED_NU)
    assert pgf_poisson(nu, TestFunction(space2, [1, 1])) == pytest.approx(np.exp(3))
    assert pgf_poisson(nu, TestFunction(space2, [0, 0])) == 1
    sp1 = GroundSpace.counting(1)
    assert pgf_poisson(IntensityMeasure(sp1, [1]), TestFunction(sp1, [-0.5])) == pytest.approx(0.6065306597126334)


def test_dpp_examples(space2):
    k = Kernel(space2, WORKED_K)
    assert pgf_dpp(k, TestFunction(space2, [1, 1])) == pytest.approx(2.1875)
    assert pgf_dpp(k, TestFunction(space2, [0, 0])) == 1
    assert pgf_dpp(k, TestFunction(space2, [-1, -1])) == pytest.approx(0.1875)


def test_superposition_examples(space2):
    nu = ExactPoisson(IntensityMeasure(space2, WORKED_NU))
    dpp = ExactDpp(Kernel(space2, WORKED_K))
    one = TestFunction(space2, [1, 1])
    assert pgf_superposition([nu, dpp], one) == pytest.approx(43.937112019473027)
    assert pgf_superposition([dpp], one) == dpp(one)
    assert pgf_superposition([nu, dpp], TestFunction(space2, [0, 0])) == 1


def test_entire_examples(space2):
    one = TestFunction(space2, [1, 1])
    dpp = ExactDpp(Kernel(space2, WORKED_K))
    pois = ExactPoisson(IntensityMeasure(space2, WORKED_NU))
    for oracle in (dpp, pois, ExactProduct([pois, dpp])):
        assert evaluate_entire(oracle, one, 0) == 1
    assert abs(evaluate_entire(dpp, one, -4 / 3)) < 1e-15
    assert evaluate_entire(pois, one, 2) == pytest.approx(np.exp(6))


def test_essential_support_block(space2):
    # entries off the support never enter the determinant
    k = Kernel(space2, [[0.5, 7.0], [7.0, 0.5]])
    assert pgf_dpp(k, TestFunction(space2, [1, 0])) == pytest.approx(1.5)
    assert ExactDpp(k).degree_bound(TestFunction(space2, [1, 0])) == 1


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.complex_numbers(max_magnitude=50, allow_nan=False, allow_infinity=False))
def test_poisson_never_vanishes(seed, z):
    rng = np.random.default_rng(seed)
    sp = GroundSpace.counting(3)
    nu = IntensityMeasure(sp, rng.uniform(0, 2, 3))
    phi = TestFunction(sp, rng.uniform(-1, 1, 3))
    c = np.sum(phi.phi * nu.mass)
    v = evaluate_entire(ExactPoisson(nu), phi, z)
    assert v == pytest.approx(np.exp(z * c), rel=1e-12)
    assert abs(v) > 0 or np.real(z * c) < -700


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_dpp_entire_is_polynomial_of_support_degree(n, seed):
    rng = np.random.default_rng(seed)
    k = random_kernel(rng, n)
    phi = TestFunction(k.space, rng.uniform(-1, 1, n) * (rng.random(n) < 0.7))
    f = ExactDpp(k).entire(phi)
    s = len(phi.ess_support)
    nodes = np.exp(2j * np.pi * np.arange(s + 1) / (s + 1))
    coeffs = np.fft.fft(f(nodes)) / (s + 1)
    z = rng.normal(size=10) + 1j * rng.normal(size=10)
    interp = np.polynomial.polynomial.polyval(z, coeffs)
    assert np.allclose(interp, f(z), rtol=1e-9, atol=1e-12 * np.max(np.abs(f(z))))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_eigenvalue_product_identity(n, seed):
    rng = np.random.default_rng(seed)
    K = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    sp = GroundSpace.counting(n)
    phi = TestFunction(sp, (rng.normal(size=n) + 1j * rng.normal(size=n)) * (rng.random(n) < 0.8))
    S = phi.support_index
    T = phi.phi[S, None] * K[np.ix_(S, S)]
    lam = np.linalg.eigvals(T) if S.size else np.zeros(0)
    f = ExactDpp(Kernel(sp, K)).entire(phi)
    for z in rng.normal(size=5) + 1j * rng.normal(size=5):
        assert np.prod(1 + z * lam) == pytest.approx(f(z), rel=1e-9, abs=1e-12)


def test_logderiv_matches_finite_difference(space2):
    k = Kernel(space2, WORKED_K)
    f = ExactDpp(k).entire(TestFunction(space2, [0.3, -0.8]))
    z = np.array([0.4 + 0.2j, -1.5 + 3j])
    h = 1e-6
    fd = (f(z + h) - f(z - h)) / (2 * h) / f(z)
    assert np.allclose(f.logderiv(z), fd, rtol=1e-7)


def test_empirical_phi_zero(worked):
    b = sample_batch(worked[2], 100, RngState(1))
    est = pgf_empirical(b, TestFunction(b.space, [0, 0]))
    assert est.value == 1 and est.stderr == 0


def test_empirical_poisson_and_avoidance():
    sp = GroundSpace.counting(1)
    b = sample_batch(Poisson(IntensityMeasure(sp, [1.0])), 100_000, RngState(31))
    est = pgf_empirical(b, TestFunction(sp, [-0.5]))
    assert abs(est.value - np.exp(-0.5)) < 5 * est.stderr
    sp2 = GroundSpace.counting(2)
    b = sample_batch(Determinantal(Kernel(sp2, WORKED_K)), 100_000, RngState(32))
    est = pgf_empirical(b, TestFunction(sp2, [-1, -1]))
    assert abs(est.value - 0.1875) < 5 * est.stderr


def test_empirical_consistency_random_phi(worked):
    _, _, model = worked
    exact = oracle_for_model(model)
    b = sample_batch(model, 100_000, RngState(33))
    emp = Empirical(b)
    rng = np.random.default_rng(33)
    for _ in range(20):
        phi = TestFunction(b.space, rng.uniform(-1, 0, 2))
        est = emp.estimate(phi)
        assert abs(est.value - exact(phi)) < 5 * est.stderr


def test_empirical_entire_coefficients(space2):
    b = SampleBatch(space2, np.array([[0, 0], [1, 0], [2, 1]]))
    e = Empirical(b)
    phi = TestFunction(space2, [0.5, -1.0])
    for z in (0.3, -2.0, 1 + 1j):
        direct = np.mean([(1 + z * 0.5) ** c0 * (1 - z) ** c1 for c0, c1 in b.counts])
        assert e.entire(phi)(z) == pytest.approx(direct)


def test_empirical_variance_warning(space2):
    b = SampleBatch(space2, np.array([[0, 1]]))
    with pytest.warns(VarianceWarning):
        pgf_empirical(b, TestFunction(space2, [1.0, 0.0]))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        pgf_empirical(b, TestFunction(space2, [-0.5, 0.1]))


def test_empty_batch(space2):
    with pytest.raises(EmptyBatch):
        pgf_empirical(SampleBatch(space2, np.zeros((0, 2), dtype=int)), TestFunction(space2, [0, 0]))


def test_black_box_wraps_callable(space2):
    dpp = ExactDpp(Kernel(space2, WORKED_K))
    bb = BlackBox(dpp, degree_bound=2)
    phi = TestFunction(space2, [1, 1])
    assert bb.entire(phi)(-4.0) == pytest.approx(dpp.entire(phi)(-4.0), abs=1e-15)
    assert bb.degree_bound(phi) == 2
