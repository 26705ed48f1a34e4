"""Acceptance criteria 1-9.

Each criterion prints one ``criterion N: PASS|FAIL`` line with its measured
errors and runtime.  Run ``python tests/test_acceptance.py`` for the lines
alone, or ``pytest tests/test_acceptance.py -v``.
"""
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

sys.path.insert(0, str(Path(__file__).parent))

from conftest import WORKED_K, WORKED_NU, random_kernel, random_model  # noqa: E402

from pgf_disentangle.disentangle import DisentangleOptions, disentangle, nth_root_check, phi_grid  # noqa: E402
from pgf_disentangle.model import (  # noqa: E402
    Determinantal,
    GroundSpace,
    IntensityMeasure,
    Kernel,
    Poisson,
    Superposition,
    TestFunction,
)
from pgf_disentangle.pgf import Empirical, ExactDpp, ExactPoisson, oracle_for_model  # noqa: E402
from pgf_disentangle.samplers import RngState, brute_force_dpp_distribution, sample_batch  # noqa: E402
from pgf_disentangle.zeros import (  # noqa: E402
    match_multisets,
    polynomial_from_zeros,
    zeros_by_contour,
    zeros_from_kernel,
)


def _relative_match(found, truth):
    found, truth = np.asarray(found), np.asarray(truth)
    cost = np.abs(found[:, None] - truth[None, :]) / np.maximum(1.0, np.abs(truth))[None, :]
    r, c = linear_sum_assignment(cost)
    return float(cost[r, c].max(initial=0.0))


def _line(n, passed, detail, seconds, budget):
    return f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}  [{seconds:.1f} s, budget {budget} s]"


def criterion_1():
    """Exact round trip on 100 random models."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(123)
    worst = np.zeros(3)
    for _ in range(100):
        n = int(rng.integers(2, 9))
        nu, k, model = random_model(rng, n)
        r = disentangle(oracle_for_model(model), model.space)
        if r.flags:
            return False, f"flags raised: {r.flags}", time.perf_counter() - t0
        worst[0] = max(worst[0], np.max(np.abs(r.diagnostics["nu_raw"] - nu.nu)))
        for w, lam in r.window_spectra.items():
            idx = sorted(w)
            ev = np.linalg.eigvalsh(k.matrix[np.ix_(idx, idx)])
            ev = ev[np.abs(ev) > 1e-10]
            err = np.inf if ev.size != lam.size else match_multisets(ev, lam).max(initial=0.0)
            worst[1] = max(worst[1], err)
        for s, v in r.principal_minors.items():
            idx = sorted(s)
            worst[2] = max(worst[2], abs(v - np.linalg.det(k.matrix[np.ix_(idx, idx)])))
    dt = time.perf_counter() - t0
    passed = worst[0] <= 1e-7 and worst[1] <= 1e-6 and worst[2] <= 1e-7 and dt < 60
    return passed, f"max |nu err| {worst[0]:.2e}, spectra {worst[1]:.2e}, minors {worst[2]:.2e}", dt


def criterion_2():
    """Contour zeros against the eigenvalue oracle on 200 random (K, phi)."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = residue = 0.0
    count_ok = True
    done = 0
    while done < 200:
        n = int(rng.integers(1, 9))
        k = random_kernel(rng, n)
        phi = TestFunction(k.space, rng.uniform(-1, 1, n))
        oracle = zeros_from_kernel(k, phi)
        if len(oracle) == 0:
            continue
        zs = zeros_by_contour(ExactDpp(k).entire(phi), 2 * np.max(np.abs(oracle.zeros)), n)
        done += 1
        residue = max(residue, zs.winding_residual)
        if zs.total_count != oracle.total_count:
            count_ok = False
            continue
        worst = max(worst, _relative_match(zs.expanded(), oracle.expanded()))
    dt = time.perf_counter() - t0
    passed = count_ok and worst <= 1e-6 and residue < 0.01 and dt < 30
    return passed, f"max zero err (per max(1,|x|)) {worst:.2e}, max winding residue {residue:.2e}, counts ok {count_ok}", dt


def criterion_3():
    """Reconstruction from zeros at 50 interior points, 100 instances."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 9))
        k = random_kernel(rng, n)
        phi = TestFunction(k.space, rng.uniform(-1, 1, n))
        zs = zeros_from_kernel(k, phi)
        R = np.max(np.abs(zs.zeros)) if len(zs) else 1.0
        z = R * np.sqrt(rng.random(50)) * np.exp(2j * np.pi * rng.random(50))
        f = ExactDpp(k).entire(phi)(z)
        P = polynomial_from_zeros(zs)(z)
        worst = max(worst, float(np.max(np.abs(P - f) / np.abs(f))))
    dt = time.perf_counter() - t0
    return worst <= 1e-8 and dt < 10, f"max relative error {worst:.2e}", dt


def criterion_4():
    """Product rule for empirical functionals of superposed batches."""
    t0 = time.perf_counter()
    sp = GroundSpace.counting(2)
    pois = Poisson(IntensityMeasure(sp, WORKED_NU))
    dpp = Determinantal(Kernel(sp, WORKED_K))
    m = 100_000
    b1 = Empirical(sample_batch(pois, m, RngState(41)))
    b2 = Empirical(sample_batch(dpp, m, RngState(42)))
    bs = Empirical(sample_batch(Superposition((pois, dpp)), m, RngState(43)))
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(20):
        phi = TestFunction(sp, rng.uniform(-1, 0, 2))
        e1, e2, es = b1.estimate(phi), b2.estimate(phi), bs.estimate(phi)
        band = np.sqrt(es.stderr**2 + (abs(e2.value) * e1.stderr) ** 2 + (abs(e1.value) * e2.stderr) ** 2)
        worst = max(worst, abs(es.value - e1.value * e2.value) / band)
    dt = time.perf_counter() - t0
    return worst <= 5 and dt < 120, f"max deviation {worst:.2f} sigma", dt


def criterion_5():
    """DPP sampler against brute-force enumeration, plus avoidance probabilities."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    m = 200_000
    worst = worst_avoid = 0.0
    for n in range(1, 7):
        k = random_kernel(rng, n, top=0.9)
        exact = brute_force_dpp_distribution(k)
        counts = sample_batch(Determinantal(k), m, RngState(50 + n)).counts
        rows, freq = np.unique(counts, axis=0, return_counts=True)
        seen = {frozenset(np.flatnonzero(r)): f / m for r, f in zip(rows, freq)}
        for s, p in exact.items():
            sigma = np.sqrt(p * (1 - p) / m)
            worst = max(worst, abs(seen.get(s, 0.0) - p) / max(sigma, 1e-300))
        bad = set(seen) - set(exact)
        if bad:
            return False, f"sampled impossible subsets {bad}", time.perf_counter() - t0
        for size in range(1, n + 1):
            for mask in range(1 << n):
                idx = [i for i in range(n) if mask >> i & 1]
                if len(idx) != size:
                    continue
                p = float(np.linalg.det(np.eye(size) - k.matrix[np.ix_(idx, idx)]).real)
                freq = np.mean(counts[:, idx].sum(axis=1) == 0)
                sigma = np.sqrt(p * (1 - p) / m)
                worst_avoid = max(worst_avoid, abs(freq - p) / max(sigma, 1e-300))
    dt = time.perf_counter() - t0
    passed = worst <= 5 and worst_avoid <= 5 and dt < 120
    return passed, f"max subset deviation {worst:.2f} sigma, max avoidance deviation {worst_avoid:.2f} sigma", dt


def criterion_6():
    """Empirical disentangling of the worked model from 100000 samples."""
    t0 = time.perf_counter()
    sp = GroundSpace.counting(2)
    model = Superposition((Poisson(IntensityMeasure(sp, WORKED_NU)), Determinantal(Kernel(sp, WORKED_K))))
    F = Empirical(sample_batch(model, 100_000, RngState(6)))
    r = disentangle(F, sp, DisentangleOptions(minors=False, grid_size=5))
    nu_z = np.abs(r.diagnostics["nu_raw"] - WORKED_NU) / r.nu_stderr
    full = frozenset({0, 1})
    lam = r.window_spectra[full].real
    order = np.argsort(-lam)
    lam_z = np.abs(lam[order] - [0.75, 0.25]) / r.spectra_stderr[full][order]
    dt = time.perf_counter() - t0
    detail = (
        f"nu {np.round(r.diagnostics['nu_raw'], 4).tolist()} (z {np.round(nu_z, 2).tolist()}), "
        f"spectrum {np.round(lam[order], 4).tolist()} (z {np.round(lam_z, 2).tolist()})"
    )
    return bool(np.all(nu_z <= 5) and np.all(lam_z <= 5) and dt < 180), detail, dt


def criterion_7():
    """Poisson-only inputs have no zeros; DPP-only inputs have B_N = 1."""
    t0 = time.perf_counter()
    sp = GroundSpace.counting(2)
    grid = phi_grid(sp, 20)
    opts = DisentangleOptions(phi_grid=grid, minors=False)
    r = disentangle(ExactPoisson(IntensityMeasure(sp, WORKED_NU)), sp, opts)
    empty = len(r.per_phi_factors) == 20 and all(len(f.zeros) == 0 for f in r.per_phi_factors)
    r = disentangle(ExactDpp(Kernel(sp, WORKED_K)), sp, opts)
    dev = max(abs(f.B_N - 1) for f in r.per_phi_factors)
    dt = time.perf_counter() - t0
    passed = empty and len(r.per_phi_factors) == 20 and dev < 1e-10 and dt < 5
    return passed, f"Poisson zero sets empty: {empty}, max |B_N - 1| {dev:.2e}", dt


def criterion_8():
    """n-th roots of Poisson functionals for n in {2, 3, 5}."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    worst = 0.0
    ok = True
    for _ in range(10):
        n_atoms = int(rng.integers(2, 6))
        sp = GroundSpace.counting(n_atoms)
        F = ExactPoisson(IntensityMeasure(sp, rng.uniform(0, 2, n_atoms)))
        grid = [TestFunction(sp, rng.uniform(0, 1, n_atoms)) for _ in range(10)]
        for n in (2, 3, 5):
            rep = nth_root_check(F, n, grid, rtol=1e-10)
            ok &= bool(rep.passed)
            worst = max(worst, rep.max_rel_error, rep.multiplicative_error)
    dt = time.perf_counter() - t0
    return ok and dt < 5, f"max relative error {worst:.2e}", dt


def criterion_9():
    """50 pairs of distinct models give distinguishable results."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    smallest = np.inf
    opts = DisentangleOptions(grid_size=2)
    for _ in range(50):
        n = int(rng.integers(2, 5))
        a = disentangle(oracle_for_model(random_model(rng, n)[2]), GroundSpace.counting(n), opts)
        b = disentangle(oracle_for_model(random_model(rng, n)[2]), GroundSpace.counting(n), opts)
        gap = max(
            float(np.max(np.abs(a.recovered_nu.nu - b.recovered_nu.nu))),
            max(abs(a.principal_minors[s] - b.principal_minors[s]) for s in a.principal_minors),
        )
        smallest = min(smallest, gap)
    dt = time.perf_counter() - t0
    return smallest > 1e-6 and dt < 60, f"smallest field gap over pairs {smallest:.2e}", dt


BUDGETS = {1: 60, 2: 30, 3: 10, 4: 120, 5: 120, 6: 180, 7: 5, 8: 5, 9: 60}
CRITERIA = {i: globals()[f"criterion_{i}"] for i in BUDGETS}


@pytest.mark.parametrize("n", list(CRITERIA))
def test_criterion(n, capsys):
    passed, detail, dt = CRITERIA[n]()
    with capsys.disabled():
        print("\n" + _line(n, passed, detail, dt, BUDGETS[n]))
    assert passed, detail


if __name__ == "__main__":
    results = []
    for n, fn in CRITERIA.items():
        passed, detail, dt = fn()
        print(_line(n, passed, detail, dt, BUDGETS[n]), flush=True)
        results.append(passed)
    sys.exit(0 if all(results) else 1)
