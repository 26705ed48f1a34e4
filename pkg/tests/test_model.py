import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pgf_disentangle.model import (
    Determinantal,
    GroundSpace,
    IntensityMeasure,
    InvalidKernel,
    Kernel,
    PointConfiguration,
    Poisson,
    Superposition,
    TestFunction,
    indicator,
    leaves,
    permute_model,
    total_intensity,
    validate_kernel_for_sampling,
)

from conftest import WORKED_K, random_kernel


def test_validate_worked_kernel(space2):
    ok, why = validate_kernel_for_sampling(Kernel(space2, WORKED_K))
    assert ok and why == []


def test_validate_zero_kernel(space2):
    assert validate_kernel_for_sampling(Kernel(space2, np.zeros((2, 2))))[0]


def test_validate_rejects_expansive():
    ok, why = validate_kernel_for_sampling(Kernel(GroundSpace.counting(1), [[1.5]]))
    assert not ok
    assert any("1.5 > 1" in w for w in why)


def test_validate_rejects_non_hermitian(space2):
    ok, why = validate_kernel_for_sampling(Kernel(space2, [[0.5, 0.3], [0.0, 0.5]]))
    assert not ok


def test_indicator_examples():
    sp3 = GroundSpace.counting(3)
    assert np.array_equal(indicator(sp3, {0, 2}).phi, [1, 0, 1])
    empty = indicator(sp3, set())
    assert np.array_equal(empty.phi, [0, 0, 0]) and empty.ess_support == frozenset()
    assert np.array_equal(indicator(GroundSpace.counting(2), {0, 1}).phi, [1, 1])


def test_indicator_out_of_range():
    with pytest.raises(IndexError):
        indicator(GroundSpace.counting(2), {2})


@given(st.sets(st.integers(0, 7)))
def test_indicator_support_roundtrip(subset):
    assert indicator(GroundSpace.counting(8), subset).ess_support == frozenset(subset)


def test_effective_kernel_uses_base_measure():
    sp = GroundSpace(("a", "b"), np.array([4.0, 1.0]))
    k = Kernel(sp, WORKED_K)
    assert np.allclose(k.matrix, [[2.0, 0.5], [0.5, 0.5]])
    assert np.allclose(IntensityMeasure(sp, [1, 2]).mass, [4, 2])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_spectral_decomposition_clamped_and_unitary(n, seed):
    k = random_kernel(np.random.default_rng(seed), n, top=1.0)
    lam, V = k.spectral_decomposition()
    assert np.all((lam >= 0) & (lam <= 1))
    assert np.allclose(V.conj().T @ V, np.eye(n), atol=1e-10)


def test_spectral_decomposition_rejects_invalid():
    with pytest.raises(InvalidKernel):
        Kernel(GroundSpace.counting(1), [[1.5]]).spectral_decomposition()


def test_space_validation():
    with pytest.raises(ValueError):
        GroundSpace(("a", "a"), np.ones(2))
    with pytest.raises(ValueError):
        GroundSpace(("a",), np.array([0.0]))
    with pytest.raises(ValueError):
        IntensityMeasure(GroundSpace.counting(1), [-1.0])


def test_superposition_rules(worked):
    nu, k, model = worked
    assert len(leaves(model)) == 2
    assert np.allclose(total_intensity(model), [1, 2])
    with pytest.raises(ValueError):
        Superposition((Poisson(nu), Determinantal(Kernel(GroundSpace.counting(3), np.zeros((3, 3))))))
    deep = Poisson(nu)
    for _ in range(4):
        deep = Superposition((deep,))
    with pytest.raises(ValueError):
        Superposition((deep,))


def test_permute_model(worked):
    _, _, model = worked
    p = permute_model(model, [1, 0])
    nu_p, k_p = leaves(p)
    assert np.allclose(nu_p.intensity.nu, [2, 1])
    assert np.allclose(k_p.kernel.K, WORKED_K[::-1, ::-1])


def test_point_configuration():
    c = PointConfiguration([0, 1, 0])
    assert c.is_simple and c == PointConfiguration([0, 1, 0])
    with pytest.raises(ValueError):
        PointConfiguration([-1])


def test_test_function_scaling(space2):
    phi = TestFunction(space2, [0.5, 0.0])
    assert phi.ess_support == frozenset({0})
    assert np.allclose(phi.scaled(2j).phi, [1j, 0])
