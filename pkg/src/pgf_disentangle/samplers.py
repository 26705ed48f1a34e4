"""Samplers for Poisson, determinantal and superposed processes.

Randomness is keyed by ``RngState(seed, stream)``. Every draw derives its
generator from a ``numpy.random.SeedSequence`` whose spawn key encodes the
stream, the chunk index and the component path, so results never depend on
call order or on how many worker threads share a batch.
"""
from __future__ import annotations

import itertools
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import DEFAULT_TOLERANCES, Tolerances
from .model import (
    Determinantal,
    GroundSpace,
    IntensityMeasure,
    InvalidKernel,
    Kernel,
    PointConfiguration,
    Poisson,
    ProcessModel,
    Superposition,
    validate_kernel_for_sampling,
)

CHUNK_SIZE = 8192
BRUTE_FORCE_MAX_N = 12


class TooLarge(ValueError):
    pass


class SingularIminusK(ValueError):
    pass


@dataclass(frozen=True)
class RngState:
    seed: int
    stream: int = 0

    def __post_init__(self):
        for name in ("seed", "stream"):
            v = getattr(self, name)
            if not 0 <= int(v) < 2**64:
                raise ValueError(f"{name} must be an unsigned 64-bit integer")

    def seed_sequence(self, *path: int) -> np.random.SeedSequence:
        return np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream), *path))


@dataclass(frozen=True, eq=False)
class SampleBatch:
    """Samples stored as an (M, n) integer array of per-atom counts."""

    space: GroundSpace
    counts: np.ndarray
    model_digest: str = ""
    rng: RngState | None = None

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[1] != self.space.n:
            raise ValueError(f"counts must have shape (M, {self.space.n})")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    def __len__(self) -> int:
        return self.counts.shape[0]

    @property
    def configs(self) -> list[PointConfiguration]:
        return [PointConfiguration(row) for row in self.counts]

    @classmethod
    def concatenate(cls, batches: list["SampleBatch"]) -> "SampleBatch":
        first = batches[0]
        if any(b.space != first.space for b in batches[1:]):
            raise ValueError("batches live on different ground spaces")
        return cls(first.space, np.concatenate([b.counts for b in batches]), first.model_digest, first.rng)


def _generator(ss: np.random.SeedSequence) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(ss))


def _child(ss: np.random.SeedSequence, i: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(ss.entropy, spawn_key=(*ss.spawn_key, i))


def _poisson_counts(intensity: IntensityMeasure, m: int, gen: np.random.Generator) -> np.ndarray:
    return gen.poisson(intensity.mass, size=(m, intensity.space.n)).astype(np.int64)


def _dpp_counts(
    kernel: Kernel, m: int, gen: np.random.Generator, tol: Tolerances = DEFAULT_TOLERANCES
) -> np.ndarray:
    """Spectral (HKPV) sampler, vectorised over samples with equal rank."""
    ok, why = validate_kernel_for_sampling(kernel)
    if not ok:
        raise InvalidKernel("; ".join(why))
    lam, V = kernel.spectral_decomposition()
    n = lam.size
    counts = np.zeros((m, n), dtype=np.int64)
    selected = gen.random((m, n)) < lam
    ranks = selected.sum(axis=1)
    uniforms = gen.random((m, n))
    for k in np.unique(ranks):
        if k == 0:
            continue
        rows = np.flatnonzero(ranks == k)
        cols = np.argsort(~selected[rows], axis=1, kind="stable")[:, :k]
        W = np.transpose(V[:, cols], (1, 0, 2))  # (G, n, k)
        g = np.arange(rows.size)
        for step in range(k):
            weights = np.sum(np.abs(W) ** 2, axis=2)
            cdf = np.cumsum(weights, axis=1)
            u = uniforms[rows, step] * cdf[:, -1]
            pick = np.minimum(np.sum(cdf < u[:, None], axis=1), n - 1)
            counts[rows, pick] = 1
            if step == k - 1:
                break
            row = W[g, pick, :]  # (G, r)
            j = np.argmax(np.abs(row), axis=1)
            pivot = row[g, j]
            if np.any(np.abs(pivot) < tol.gram_schmidt_pivot):
                raise FloatingPointError("HKPV elimination pivot below tolerance")
            col = W[g, :, j]  # (G, n)
            W = W - col[:, :, None] * (row / pivot[:, None])[:, None, :]
            r = W.shape[2]
            keep = np.arange(r)[None, :].repeat(rows.size, axis=0)
            keep = keep[keep != j[:, None]].reshape(rows.size, r - 1)
            W = np.take_along_axis(W, keep[:, None, :], axis=2)
            W, _ = np.linalg.qr(W)
    return counts


def _draw(model: ProcessModel, m: int, ss: np.random.SeedSequence) -> np.ndarray:
    if isinstance(model, Poisson):
        return _poisson_counts(model.intensity, m, _generator(ss))
    if isinstance(model, Determinantal):
        return _dpp_counts(model.kernel, m, _generator(ss), model.kernel.tol)
    if isinstance(model, Superposition):
        total = np.zeros((m, model.space.n), dtype=np.int64)
        for i, comp in enumerate(model.components):
            total += _draw(comp, m, _child(ss, i))
        return total
    raise TypeError(f"unsupported process model {type(model).__name__}")


def sample_poisson(nu: IntensityMeasure, rng: RngState) -> PointConfiguration:
    return PointConfiguration(_draw(Poisson(nu), 1, rng.seed_sequence())[0])


def sample_dpp(k: Kernel, rng: RngState) -> PointConfiguration:
    return PointConfiguration(_draw(Determinantal(k), 1, rng.seed_sequence())[0])


def sample_superposition(model: ProcessModel, rng: RngState) -> PointConfiguration:
    return PointConfiguration(_draw(model, 1, rng.seed_sequence())[0])


def default_threads() -> int:
    env = os.environ.get("PGF_DISENTANGLE_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def sample_batch(model: ProcessModel, m: int, rng: RngState, threads: int = 1) -> SampleBatch:
    """Draw ``m`` independent configurations.

    Chunk ``c`` always uses substream ``(stream, c)``, so the output is the
    same for any thread count.
    """
    from .io import model_digest

    if m < 1:
        raise ValueError("sample count must be >= 1")
    sizes = [min(CHUNK_SIZE, m - s) for s in range(0, m, CHUNK_SIZE)]

    def work(c):
        return _draw(model, sizes[c], rng.seed_sequence(c))

    if threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, range(len(sizes))))
    else:
        parts = [work(c) for c in range(len(sizes))]
    return SampleBatch(model.space, np.concatenate(parts), model_digest(model), rng)


def brute_force_dpp_distribution(k: Kernel) -> dict[frozenset, float]:
    """Exact law of a DPP by L-ensemble enumeration: P(S) = det(L_S) / det(I + L)."""
    n = k.space.n
    if n > BRUTE_FORCE_MAX_N:
        raise TooLarge(f"brute-force enumeration capped at n = {BRUTE_FORCE_MAX_N}, got {n}")
    if not k.is_psd_contraction:
        raise InvalidKernel("brute-force oracle requires a Hermitian PSD contraction")
    lam, _ = k.spectral_decomposition()
    if lam.max(initial=0.0) >= 1 - 1e-12:
        raise SingularIminusK("I - K is singular; the L-ensemble does not exist")
    A = k.matrix
    L = A @ np.linalg.inv(np.eye(n) - A)
    norm = np.linalg.det(np.eye(n) + L).real
    out = {frozenset(): 1.0 / norm}
    for size in range(1, n + 1):
        for S in itertools.combinations(range(n), size):
            idx = np.array(S)
            out[frozenset(S)] = float(np.linalg.det(L[np.ix_(idx, idx)]).real / norm)
    return out
