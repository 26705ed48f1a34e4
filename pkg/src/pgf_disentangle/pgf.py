"""Probability generating functionals and their entire extensions.

For a test function phi every oracle yields the entire function
``z -> B(z * phi)``.  Exact oracles also supply its logarithmic derivative
analytically, which is what the contour zero finder integrates.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .config import DEFAULT_TOLERANCES
from .model import (
    Determinantal,
    IntensityMeasure,
    Kernel,
    Poisson,
    ProcessModel,
    TestFunction,
    leaves,
)


class EmptyBatch(ValueError):
    pass


class VarianceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class EntireFunction:
    """``z -> B(z phi)`` evaluated on arrays of ``z``.

    ``logderiv`` is ``f'/f`` when known in closed form, else None.
    ``bulk`` is an optional cheaper ``f'/f`` that is accurate away from the
    zeros; quadrature on a circle uses it, root polishing never does.
    """

    f: Callable[[np.ndarray], np.ndarray]
    logderiv: Callable[[np.ndarray], np.ndarray] | None = None
    degree_bound: int | None = None
    bulk: Callable[[np.ndarray], np.ndarray] | None = None

    def __call__(self, z):
        scalar = np.ndim(z) == 0
        out = self.f(np.atleast_1d(np.asarray(z, dtype=complex)))
        return complex(out[0]) if scalar else out


class PgfOracle:
    """Evaluable functional ``phi -> B(phi)``."""

    exact = True

    def __call__(self, phi: TestFunction) -> complex:
        return complex(self.entire(phi)(1.0))

    def entire(self, phi: TestFunction) -> EntireFunction:
        raise NotImplementedError

    def degree_bound(self, phi: TestFunction) -> int | None:
        """Bound on the number of zeros of ``z -> B(z phi)``, if known."""
        return None


class ExactPoisson(PgfOracle):
    def __init__(self, nu: IntensityMeasure):
        self.nu = nu

    def __call__(self, phi: TestFunction) -> complex:
        return pgf_poisson(self.nu, phi)

    def entire(self, phi: TestFunction) -> EntireFunction:
        c = complex(np.sum(phi.phi * self.nu.mass))
        return EntireFunction(
            f=lambda z: np.exp(c * z),
            logderiv=lambda z: np.full(np.shape(z), c, dtype=complex),
            degree_bound=0,
        )

    def degree_bound(self, phi: TestFunction) -> int:
        return 0


def _compressed(k: Kernel, phi: TestFunction) -> np.ndarray:
    """``diag(phi) K`` restricted to the essential support block."""
    S = phi.support_index
    return phi.phi[S, None] * k.matrix[np.ix_(S, S)]


class ExactDpp(PgfOracle):
    def __init__(self, kernel: Kernel):
        self.kernel = kernel

    def __call__(self, phi: TestFunction) -> complex:
        return pgf_dpp(self.kernel, phi)

    def entire(self, phi: TestFunction) -> EntireFunction:
        T = _compressed(self.kernel, phi)
        s = T.shape[0]
        if s == 0:
            return EntireFunction(
                f=lambda z: np.ones(np.shape(z), dtype=complex),
                logderiv=lambda z: np.zeros(np.shape(z), dtype=complex),
                degree_bound=0,
            )
        eye = np.eye(s)

        def f(z):
            z = np.asarray(z, dtype=complex)
            return np.linalg.det(eye + z.reshape(-1)[:, None, None] * T).reshape(z.shape)

        def logderiv(z):
            # d/dz log det(I + zT) = tr((I + zT)^{-1} T); infinite at a zero
            z = np.asarray(z, dtype=complex)
            A = eye + z.reshape(-1)[:, None, None] * T
            try:
                X = np.linalg.solve(A, np.broadcast_to(T, A.shape))
                return np.trace(X, axis1=1, axis2=2).reshape(z.shape)
            except np.linalg.LinAlgError:
                out = np.empty(A.shape[0], dtype=complex)
                for i, Ai in enumerate(A):
                    try:
                        out[i] = np.trace(np.linalg.solve(Ai, T))
                    except np.linalg.LinAlgError:
                        out[i] = np.inf
                return out.reshape(z.shape)

        # det(I + zT) has degree s: its coefficients follow from s + 1
        # determinants on a circle.  Power sums are well conditioned in the
        # coefficients, so this form serves the quadrature; clustered roots
        # are not, so polishing keeps the solve above.
        norm = np.linalg.norm(T, 2)
        rho = 1.0 / norm if norm > 0 else 1.0
        nodes = rho * np.exp(2j * np.pi * np.arange(s + 1) / (s + 1))
        coeffs = np.fft.fft(f(nodes)) / (s + 1) / rho ** np.arange(s + 1)
        coeffs[0] = 1.0
        dcoeffs = np.polynomial.polynomial.polyder(coeffs)
        pv = np.polynomial.polynomial.polyval

        def bulk(z):
            z = np.asarray(z, dtype=complex)
            with np.errstate(divide="ignore", invalid="ignore"):
                return pv(z, dcoeffs) / pv(z, coeffs)

        return EntireFunction(f, logderiv, s, bulk)

    def degree_bound(self, phi: TestFunction) -> int:
        return len(phi.ess_support)


class ExactProduct(PgfOracle):
    def __init__(self, factors: Sequence[PgfOracle]):
        if not factors:
            raise ValueError("product needs at least one factor")
        self.factors = tuple(factors)

    def __call__(self, phi: TestFunction) -> complex:
        return pgf_superposition(self.factors, phi)

    def entire(self, phi: TestFunction) -> EntireFunction:
        parts = [fac.entire(phi) for fac in self.factors]
        if len(parts) == 1:
            return parts[0]

        def f(z):
            out = np.ones(np.shape(z), dtype=complex)
            for p in parts:
                out = out * p.f(z)
            return out

        logderiv = bulk = None
        if all(p.logderiv is not None for p in parts):
            def logderiv(z):
                return sum(p.logderiv(z) for p in parts)

            def bulk(z):
                return sum((p.bulk or p.logderiv)(z) for p in parts)

        bounds = [p.degree_bound for p in parts]
        bound = None if any(b is None for b in bounds) else sum(bounds)
        return EntireFunction(f, logderiv, bound, bulk)

    def degree_bound(self, phi: TestFunction) -> int | None:
        bounds = [fac.degree_bound(phi) for fac in self.factors]
        return None if any(b is None for b in bounds) else sum(bounds)


class BlackBox(PgfOracle):
    """Wrap any callable ``phi -> B(phi)``; derivatives are left to the caller."""

    def __init__(self, fn: Callable[[TestFunction], complex], degree_bound: int | None = None, exact: bool = True):
        self.fn = fn
        self._bound = degree_bound
        self.exact = exact

    def __call__(self, phi: TestFunction) -> complex:
        return complex(self.fn(phi))

    def entire(self, phi: TestFunction) -> EntireFunction:
        def f(z):
            z = np.asarray(z, dtype=complex)
            flat = [complex(self.fn(phi.scaled(w))) for w in z.reshape(-1)]
            return np.array(flat, dtype=complex).reshape(z.shape)

        return EntireFunction(f, None, self._bound)

    def degree_bound(self, phi: TestFunction) -> int | None:
        return self._bound


@dataclass(frozen=True)
class EmpiricalEstimate:
    value: complex
    stderr: float
    variance_warning: bool = False


class Empirical(PgfOracle):
    """Sample-mean functional of a batch of configurations.

    Samples are collapsed to distinct configurations with multiplicities, so
    every per-phi computation costs O(#distinct configurations).
    """

    exact = False

    def __init__(self, batch):
        if len(batch) == 0:
            raise EmptyBatch("empirical functional needs at least one sample")
        self.batch = batch
        self.space = batch.space
        rows, counts = np.unique(batch.counts, axis=0, return_counts=True)
        self.rows = rows
        self.weights = counts.astype(float)
        self.m = int(counts.sum())

    def __call__(self, phi: TestFunction) -> complex:
        return self.estimate(phi).value

    def estimate(self, phi: TestFunction, eta: float = DEFAULT_TOLERANCES.variance_eta) -> EmpiricalEstimate:
        vals = _config_values(self.rows, phi.phi)
        mean = np.sum(self.weights * vals) / self.m
        if self.m > 1:
            var = np.sum(self.weights * np.abs(vals - mean) ** 2) / (self.m - 1)
            stderr = float(np.sqrt(var / self.m))
        else:
            stderr = float("inf")
        warn = bool(np.any(np.abs(1 + phi.phi) > 1 + eta))
        return EmpiricalEstimate(complex(mean), stderr, warn)

    def polynomial_terms(self, phi: TestFunction) -> tuple[np.ndarray, np.ndarray]:
        """Per-configuration coefficients of ``z -> prod_i (1 + z phi_i)^{c_i}``.

        Returns ``(C, w)``: ``C[u, k]`` is the z^k coefficient for distinct
        configuration ``u`` and ``w[u]`` its frequency.
        """
        S = phi.support_index
        sub = self.rows[:, S]
        degree = int(sub.sum(axis=1).max(initial=0))
        C = np.zeros((len(sub), degree + 1), dtype=complex)
        P = np.polynomial.polynomial
        cache: dict[tuple, np.ndarray] = {}
        for u, row in enumerate(sub):
            key = tuple(row)
            poly = cache.get(key)
            if poly is None:
                poly = np.array([1.0 + 0j])
                for a, c in zip(phi.phi[S], row):
                    if c:
                        poly = P.polymul(poly, P.polypow([1.0, a], int(c)))
                cache[key] = poly
            C[u, : poly.size] = poly
        return C, self.weights

    def coefficients(self, phi: TestFunction) -> np.ndarray:
        C, w = self.polynomial_terms(phi)
        return (w @ C) / self.m

    def entire(self, phi: TestFunction) -> EntireFunction:
        a = self.coefficients(phi)
        da = np.polynomial.polynomial.polyder(a) if a.size > 1 else np.zeros(1, dtype=complex)
        P = np.polynomial.polynomial

        def f(z):
            return P.polyval(np.asarray(z, dtype=complex), a)

        def logderiv(z):
            z = np.asarray(z, dtype=complex)
            return P.polyval(z, da) / P.polyval(z, a)

        return EntireFunction(f, logderiv, None)


def _config_values(rows: np.ndarray, phi: np.ndarray) -> np.ndarray:
    base = 1 + phi
    S = np.flatnonzero(phi != 0)
    if S.size == 0:
        return np.ones(len(rows), dtype=complex)
    return np.prod(np.power(base[S][None, :], rows[:, S]), axis=1)


# Operations -----------------------------------------------------------------

def pgf_poisson(nu: IntensityMeasure, phi: TestFunction) -> complex:
    return complex(np.exp(np.sum(phi.phi * nu.mass)))


def pgf_dpp(k: Kernel, phi: TestFunction) -> complex:
    T = _compressed(k, phi)
    if T.shape[0] == 0:
        return 1.0 + 0j
    return complex(np.linalg.det(np.eye(T.shape[0]) + T))


def pgf_superposition(factors: Sequence[PgfOracle], phi: TestFunction) -> complex:
    if not factors:
        raise ValueError("superposition needs at least one factor")
    out = 1.0 + 0j
    for fac in factors:
        out *= fac(phi)
    return out


def pgf_empirical(batch, phi: TestFunction, eta: float = DEFAULT_TOLERANCES.variance_eta) -> EmpiricalEstimate:
    if len(batch) == 0:
        raise EmptyBatch("empirical functional needs at least one sample")
    est = Empirical(batch).estimate(phi, eta)
    if est.variance_warning:
        warnings.warn(
            f"|1 + phi| exceeds {1 + eta:g}; the estimator's variance may be large",
            VarianceWarning,
            stacklevel=2,
        )
    return est


def evaluate_entire(oracle: PgfOracle, phi: TestFunction, z) -> complex | np.ndarray:
    return oracle.entire(phi)(z)


def oracle_for_model(model: ProcessModel) -> PgfOracle:
    """Exact functional of a model: product over its Poisson and DPP leaves."""
    parts: list[PgfOracle] = []
    for leaf in leaves(model):
        if isinstance(leaf, Poisson):
            parts.append(ExactPoisson(leaf.intensity))
        elif isinstance(leaf, Determinantal):
            parts.append(ExactDpp(leaf.kernel))
    return parts[0] if len(parts) == 1 else ExactProduct(parts)
