"""Domain types: finite ground spaces, intensities, kernels, test functions.

The ground space is a finite set of atoms carrying a base measure ``mu``.
Kernels are stored as given (a kernel function ``K(x, y)`` on the atoms) and
acting on ``L^2(mu)``; the matrix that enters determinants and samplers is
the symmetrised ``D_mu^{1/2} K D_mu^{1/2}`` (identical to ``K`` under the
default counting measure).

Atom indices are 0-based throughout the Python API.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence, Union

import numpy as np

from .config import DEFAULT_TOLERANCES, Tolerances

MAX_NESTING_DEPTH = 4


class InvalidKernel(ValueError):
    """Kernel fails the Hermitian positive-contraction test required for sampling."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GroundSpace:
    labels: tuple
    mu: np.ndarray

    def __post_init__(self):
        labels = tuple(self.labels)
        mu = np.array(self.mu, dtype=float).reshape(-1)
        if len(labels) < 1:
            raise ValueError("ground space needs at least one atom")
        if len(set(labels)) != len(labels):
            raise ValueError("atom labels must be pairwise distinct")
        if mu.shape != (len(labels),):
            raise ValueError(f"mu has {mu.size} entries, expected {len(labels)}")
        if not np.all(np.isfinite(mu)) or np.any(mu <= 0):
            raise ValueError("base measure weights must be finite and > 0")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "mu", _frozen(mu))

    @classmethod
    def counting(cls, n: int, labels: Sequence | None = None) -> "GroundSpace":
        if labels is None:
            labels = [f"x{i + 1}" for i in range(n)]
        return cls(tuple(labels), np.ones(n))

    @property
    def n(self) -> int:
        return len(self.labels)

    @cached_property
    def sqrt_mu(self) -> np.ndarray:
        return np.sqrt(self.mu)

    @cached_property
    def is_counting(self) -> bool:
        return bool(np.all(self.mu == 1.0))

    def __eq__(self, other):
        return (
            isinstance(other, GroundSpace)
            and self.labels == other.labels
            and np.array_equal(self.mu, other.mu)
        )

    def __hash__(self):
        return hash((self.labels, self.mu.tobytes()))


@dataclass(frozen=True, eq=False)
class IntensityMeasure:
    """Poisson intensity given as a density ``nu`` with respect to ``mu``.

    The mass of atom ``i`` is ``nu[i] * mu[i]``.
    """

    space: GroundSpace
    nu: np.ndarray

    def __post_init__(self):
        nu = np.array(self.nu, dtype=float).reshape(-1)
        if nu.shape != (self.space.n,):
            raise ValueError(f"nu has {nu.size} entries, expected {self.space.n}")
        if not np.all(np.isfinite(nu)) or np.any(nu < 0):
            raise ValueError("intensity must be finite and nonnegative")
        object.__setattr__(self, "nu", _frozen(nu))

    @property
    def mass(self) -> np.ndarray:
        return self.nu * self.space.mu


@dataclass(frozen=True, eq=False)
class Kernel:
    space: GroundSpace
    K: np.ndarray
    tol: Tolerances = field(default=DEFAULT_TOLERANCES, repr=False)

    def __post_init__(self):
        K = np.array(self.K, dtype=complex)
        n = self.space.n
        if K.shape != (n, n):
            raise ValueError(f"kernel has shape {K.shape}, expected {(n, n)}")
        if not np.all(np.isfinite(K)):
            raise ValueError("kernel entries must be finite")
        object.__setattr__(self, "K", _frozen(K))

    @cached_property
    def matrix(self) -> np.ndarray:
        """The operator matrix entering determinants: ``D^{1/2} K D^{1/2}``."""
        if self.space.is_counting:
            return self.K
        s = self.space.sqrt_mu
        return _frozen(s[:, None] * self.K * s[None, :])

    @cached_property
    def is_hermitian(self) -> bool:
        A = self.matrix
        return bool(np.max(np.abs(A - A.conj().T), initial=0.0) <= self.tol.hermitian)

    @cached_property
    def _spectrum(self):
        A = self.matrix
        w, V = np.linalg.eigh((A + A.conj().T) / 2)
        return w, V

    @cached_property
    def is_psd_contraction(self) -> bool:
        if not self.is_hermitian:
            return False
        w = self._spectrum[0]
        c = self.tol.spectral_clamp
        return bool(np.all(w >= -c) and np.all(w <= 1 + c))

    def spectral_decomposition(self) -> tuple[np.ndarray, np.ndarray]:
        """Eigenvalues clamped to [0, 1] and the unitary eigenvector matrix."""
        if not self.is_psd_contraction:
            raise InvalidKernel("spectral decomposition requires a Hermitian PSD contraction")
        w, V = self._spectrum
        return np.clip(w, 0.0, 1.0), V


@dataclass(frozen=True, eq=False)
class TestFunction:
    """A bounded test function phi on the atoms; its support is derived."""

    __test__ = False  # keep pytest from collecting this class

    space: GroundSpace
    phi: np.ndarray

    def __post_init__(self):
        phi = np.array(self.phi, dtype=complex).reshape(-1)
        if phi.shape != (self.space.n,):
            raise ValueError(f"phi has {phi.size} entries, expected {self.space.n}")
        if not np.all(np.isfinite(phi)):
            raise ValueError("test function values must be finite")
        object.__setattr__(self, "phi", _frozen(phi))

    @cached_property
    def ess_support(self) -> frozenset:
        return frozenset(int(i) for i in np.flatnonzero(self.phi != 0))

    @cached_property
    def support_index(self) -> np.ndarray:
        return np.flatnonzero(self.phi != 0)

    @property
    def is_real(self) -> bool:
        return bool(np.all(self.phi.imag == 0))

    def scaled(self, z: complex) -> "TestFunction":
        return TestFunction(self.space, z * self.phi)

    def permuted(self, perm: Sequence[int], space: GroundSpace) -> "TestFunction":
        return TestFunction(space, self.phi[np.asarray(perm)])


@dataclass(frozen=True, eq=False)
class PointConfiguration:
    counts: np.ndarray

    def __post_init__(self):
        c = np.array(self.counts).reshape(-1)
        if c.size and (np.any(c < 0) or not np.all(np.equal(np.mod(c, 1), 0))):
            raise ValueError("counts must be nonnegative integers")
        object.__setattr__(self, "counts", _frozen(c.astype(np.int64)))

    @property
    def is_simple(self) -> bool:
        return bool(np.all(self.counts <= 1))

    def __eq__(self, other):
        return isinstance(other, PointConfiguration) and np.array_equal(self.counts, other.counts)

    def __hash__(self):
        return hash(self.counts.tobytes())


# Process models ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Poisson:
    intensity: IntensityMeasure

    @property
    def space(self) -> GroundSpace:
        return self.intensity.space


@dataclass(frozen=True, eq=False)
class Determinantal:
    kernel: Kernel

    @property
    def space(self) -> GroundSpace:
        return self.kernel.space


@dataclass(frozen=True, eq=False)
class Superposition:
    components: tuple

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("superposition needs at least one component")
        first = comps[0].space
        if any(c.space != first for c in comps[1:]):
            raise ValueError("all components must live on the same ground space")
        object.__setattr__(self, "components", comps)
        if _depth(self) > MAX_NESTING_DEPTH:
            raise ValueError(f"superposition nesting deeper than {MAX_NESTING_DEPTH}")

    @property
    def space(self) -> GroundSpace:
        return self.components[0].space


ProcessModel = Union[Poisson, Determinantal, Superposition]


def _depth(model) -> int:
    if isinstance(model, Superposition):
        return 1 + max(_depth(c) for c in model.components)
    return 0


def leaves(model: ProcessModel) -> list:
    """Flatten nested superpositions into their Poisson/determinantal leaves."""
    if isinstance(model, Superposition):
        out = []
        for c in model.components:
            out.extend(leaves(c))
        return out
    return [model]


def total_intensity(model: ProcessModel) -> np.ndarray:
    """Summed Poisson density over all Poisson leaves (zeros if none)."""
    nu = np.zeros(model.space.n)
    for leaf in leaves(model):
        if isinstance(leaf, Poisson):
            nu = nu + leaf.intensity.nu
    return nu


def determinantal_leaves(model: ProcessModel) -> list[Kernel]:
    return [leaf.kernel for leaf in leaves(model) if isinstance(leaf, Determinantal)]


# Operations -----------------------------------------------------------------

def validate_kernel_for_sampling(k: Kernel) -> tuple[bool, list[str]]:
    """Check the Macchi-Soshnikov conditions; returns (ok, violated conditions)."""
    problems = []
    if not k.is_hermitian:
        A = k.matrix
        problems.append(
            f"non-Hermitian: max |K - K^*| = {np.max(np.abs(A - A.conj().T)):.3g}"
        )
        return False, problems
    w = k._spectrum[0]
    c = k.tol.spectral_clamp
    for lam in w:
        if lam < -c:
            problems.append(f"eigenvalue {lam:.6g} < 0")
        elif lam > 1 + c:
            problems.append(f"eigenvalue {lam:.6g} > 1")
    return not problems, problems


def indicator(space: GroundSpace, subset: Iterable[int]) -> TestFunction:
    idx = sorted(set(int(i) for i in subset))
    if idx and (idx[0] < 0 or idx[-1] >= space.n):
        raise IndexError(f"subset {idx} out of range for {space.n} atoms")
    phi = np.zeros(space.n, dtype=complex)
    phi[idx] = 1.0
    return TestFunction(space, phi)


def permute_space(space: GroundSpace, perm: Sequence[int]) -> GroundSpace:
    """Relabel atoms so that new atom ``j`` is old atom ``perm[j]``."""
    perm = np.asarray(perm)
    return GroundSpace(tuple(space.labels[i] for i in perm), space.mu[perm])


def permute_model(model: ProcessModel, perm: Sequence[int], space: GroundSpace | None = None):
    perm = np.asarray(perm)
    if space is None:
        space = permute_space(model.space, perm)
    if isinstance(model, Poisson):
        return Poisson(IntensityMeasure(space, model.intensity.nu[perm]))
    if isinstance(model, Determinantal):
        K = model.kernel.K[np.ix_(perm, perm)]
        return Determinantal(Kernel(space, K, model.kernel.tol))
    return Superposition(tuple(permute_model(c, perm, space) for c in model.components))
