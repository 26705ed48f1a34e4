"""Recover both component laws from the functional of a superposition.

For each test function phi the entire function ``F(z) = B(z phi)`` of the
superposition is split into its zeros, which belong entirely to the
determinantal factor, and the zero-free remainder, which belongs to the
Poisson factor:

    B_Pi(phi) = prod_{x in Z(F)} (1 - 1/x),      B_N(phi) = F(1) / B_Pi(phi).

Indicator test functions then give the intensity (``log B_N(1_{i})``), the
spectra of the compressions ``1_B K 1_B`` (``-1/x``) and, via Moebius
inversion of ``B_Pi(1_S) = sum_{T subset S} det K_T``, all principal minors.

Exact oracles are factorised with the contour zero finder.  Sample-based
oracles go through ``zeros_by_fit``; every recovered quantity then carries a
first-order (delta-method) standard error built from per-configuration
influence values.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .config import DEFAULT_TOLERANCES, Tolerances
from .model import GroundSpace, IntensityMeasure, TestFunction, indicator
from .pgf import Empirical, ExactPoisson, ExactProduct, PgfOracle, pgf_poisson
from .samplers import BRUTE_FORCE_MAX_N, TooLarge
from .zeros import ZeroSet, zeros_blind, zeros_by_fit

RESCALE = 0.9
RESCALE_TRIES = 3


class DivisionNearZero(ArithmeticError):
    """B_Pi(phi) vanishes (or a zero sits at z = 1); perturb phi and retry."""


class NonPositiveFactorValue(ArithmeticError):
    pass


class NonPositiveValue(ValueError):
    pass


@dataclass
class Factorization:
    phi: TestFunction
    B_N: complex | None
    B_Pi: complex
    zeros: ZeroSet
    F_value: complex
    B_N_stderr: float | None = None
    B_Pi_stderr: float | None = None
    # per distinct configuration influence on (B_N, B_Pi); empirical mode only
    influence: dict | None = field(default=None, repr=False)

    def __iter__(self):
        yield self.B_N
        yield self.B_Pi
        yield self.zeros


@dataclass
class DisentangleOptions:
    windows: Sequence[Iterable[int]] | None = None
    phi_grid: Sequence[TestFunction] | None = None
    grid_size: int = 20
    grid_seed: int = 0
    grid_low: float = -0.9
    grid_high: float = -0.1
    minors: bool = True
    degree_bound: int | None = None
    threads: int = 1
    bootstrap: int = 0
    bootstrap_seed: int = 0
    tol: Tolerances = DEFAULT_TOLERANCES


@dataclass
class DisentangleResult:
    space: GroundSpace
    mode: str
    recovered_nu: IntensityMeasure | None
    window_spectra: dict
    principal_minors: dict | None
    per_phi_factors: list
    diagnostics: dict
    nu_stderr: np.ndarray | None = None
    spectra_stderr: dict | None = None
    minors_stderr: dict | None = None
    nonvanishing_values: list | None = None
    flags: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.flags


def phi_grid(
    space: GroundSpace, count: int = 20, low: float = -0.9, high: float = -0.1, seed: int = 0
) -> list[TestFunction]:
    rng = np.random.default_rng(seed)
    vals = rng.uniform(low, high, size=(count, space.n))
    return [TestFunction(space, v) for v in vals]


def _start_radius(phi: TestFunction) -> float:
    # valid-kernel zeros satisfy |x| >= 1 / max|phi|; the first circle sits inside that
    top = float(np.max(np.abs(phi.phi), initial=0.0))
    return 0.5 / top if top > 0 else 1.0


def _weighted_se(weights: np.ndarray, infl: np.ndarray, m: int) -> float:
    if m < 2:
        return float("inf")
    return float(np.sqrt(np.sum(weights * np.abs(infl) ** 2) / (m - 1) / m))


def _dpp_factor(F: PgfOracle, phi: TestFunction, degree_bound: int | None, tol: Tolerances):
    """Zeros of z -> F(z phi) and the zero-carried factor at z = 1."""
    if isinstance(F, Empirical):
        d = len(phi.ess_support) if degree_bound is None else degree_bound
        fit = zeros_by_fit(F, phi, d, tol)
        lam = fit.lam
        B_Pi = complex(np.prod(1 + lam))
        # d log B_Pi / d lam_j = 1 / (1 + lam_j)
        infl = B_Pi * (fit.influence[:, 1:] @ (1 / (1 + lam))) if lam.size else np.zeros(len(fit.weights))
        return fit.zeros, B_Pi, infl, fit
    zs = zeros_blind(F.entire(phi), degree_bound, _start_radius(phi), tol)
    x = zs.expanded()
    B_Pi = complex(np.prod(1 - 1 / x)) if x.size else 1.0 + 0j
    return zs, B_Pi, None, None


def factor_at(
    F: PgfOracle, phi: TestFunction, degree_bound: int | None = None, tol: Tolerances = DEFAULT_TOLERANCES,
    *, bounded: bool = True,
) -> Factorization:
    """Split ``F(phi)`` into its Poisson and determinantal factors.

    ``degree_bound`` defaults to ``|supp phi|``; with ``bounded=False`` and no
    bound the zero search runs blind until the count stabilises.
    """
    if degree_bound is None and bounded:
        degree_bound = len(phi.ess_support)
    zs, B_Pi, infl_pi, fit = _dpp_factor(F, phi, degree_bound, tol)
    if zs.zeros.size and np.min(np.abs(zs.zeros - 1)) < tol.unit_zero_gap:
        raise DivisionNearZero("a zero of B_Pi(z phi) lies at z = 1")
    if abs(B_Pi) < tol.division_floor:
        raise DivisionNearZero(f"|B_Pi(phi)| = {abs(B_Pi):.3g} is below {tol.division_floor:g}")
    if isinstance(F, Empirical):
        vals = _config_values_for(F, phi)
        F1 = complex(np.sum(F.weights * vals) / F.m)
        B_N = F1 / B_Pi
        infl_F = vals - F1
        infl_N = B_N * (infl_F / F1 - infl_pi / B_Pi)
        return Factorization(
            phi, B_N, B_Pi, zs, F1,
            _weighted_se(F.weights, infl_N, F.m),
            _weighted_se(F.weights, infl_pi, F.m),
            {"B_N": infl_N, "B_Pi": infl_pi, "fit": fit},
        )
    F1 = complex(F.entire(phi)(1.0))
    return Factorization(phi, F1 / B_Pi, B_Pi, zs, F1)


def _config_values_for(F: Empirical, phi: TestFunction) -> np.ndarray:
    from .pgf import _config_values

    return _config_values(F.rows, phi.phi)


def _map(fn: Callable, items: list, threads: int) -> list:
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# intensity ---------------------------------------------------------------------

@dataclass
class _AtomIntensity:
    nu: float
    stderr: float | None
    log_imag: float
    scale: float
    influence: np.ndarray | None


def _atom_intensity(F: PgfOracle, space: GroundSpace, i: int, tol: Tolerances) -> _AtomIntensity:
    base = indicator(space, [i])
    scale = 1.0
    for attempt in range(RESCALE_TRIES + 1):
        try:
            fac = factor_at(F, base.scaled(scale), 1, tol)
            break
        except DivisionNearZero:
            if attempt == RESCALE_TRIES:
                raise
            scale *= RESCALE
    B_N = fac.B_N
    if not B_N.real > 0:
        raise NonPositiveFactorValue(f"B_N(1_{{{i}}}) = {B_N:.6g} is not positive")
    logv = np.log(B_N)
    denom = scale * space.mu[i]
    nu = float(logv.real / denom)
    infl = None
    se = None
    if fac.influence is not None:
        infl = (fac.influence["B_N"] / B_N).real / denom
        se = _weighted_se(F.weights, infl, F.m)
    return _AtomIntensity(nu, se, float(abs(logv.imag)), scale, infl)


def _intensity_detail(F, space, tol, threads=1):
    return _map(lambda i: _atom_intensity(F, space, i, tol), list(range(space.n)), threads)


def recover_intensity(F: PgfOracle, space: GroundSpace, tol: Tolerances = DEFAULT_TOLERANCES) -> IntensityMeasure:
    """Poisson intensity from the zero-free factor at each atom indicator.

    Negative recovered values within ``tol.nu_abs`` are clipped to zero;
    larger negative values mean the input is not a Poisson-determinantal
    superposition and raise NonPositiveFactorValue.
    """
    atoms = _intensity_detail(F, space, tol)
    nu = np.array([a.nu for a in atoms])
    slack = np.array([5 * a.stderr if a.stderr is not None else tol.nu_abs for a in atoms])
    if np.any(nu < -slack):
        raise NonPositiveFactorValue(f"recovered intensity has negative entries: {nu}")
    return IntensityMeasure(space, np.clip(nu, 0, None))


# window spectra ---------------------------------------------------------------------

def _sorted_spectrum(lam: np.ndarray) -> np.ndarray:
    return lam[np.lexsort((-lam.imag, -lam.real))]


def _window_spectrum(F, space, window, degree_bound, tol, bounded=True):
    phi = indicator(space, window)
    if degree_bound is None and bounded:
        degree_bound = len(phi.ess_support)
    zs, _, _, fit = _dpp_factor(F, phi, degree_bound, tol)
    if fit is not None:
        lam = fit.lam.astype(complex)
        se = fit.stderr[1:]
        infl = fit.influence[:, 1:]
        keep = np.abs(lam) > tol.eigen_zero
        return lam[keep], se[keep], infl[:, keep]
    lam = _sorted_spectrum(zs.eigenvalues())
    return lam, None, None


def recover_window_spectra(
    F: PgfOracle, windows: Sequence[Iterable[int]], space: GroundSpace | None = None,
    tol: Tolerances = DEFAULT_TOLERANCES, degree_bound: int | None = None,
) -> dict:
    space = space or getattr(F, "space", None)
    if space is None:
        raise ValueError("pass the ground space for this oracle")
    return {frozenset(w): _window_spectrum(F, space, sorted(w), degree_bound, tol)[0] for w in windows}


# principal minors ---------------------------------------------------------------

def _moebius(values: np.ndarray, n: int) -> np.ndarray:
    """Subset Moebius transform over bitmasks: g(S) = sum_{T subset S} (-1)^{|S-T|} f(T)."""
    g = np.array(values, copy=True)
    for i in range(n):
        bit = 1 << i
        masks = np.arange(g.shape[0])
        sel = (masks & bit) != 0
        g[sel] = g[sel] - g[masks[sel] ^ bit]
    return g


def _mask_subset(mask: int, n: int) -> frozenset:
    return frozenset(i for i in range(n) if mask >> i & 1)


def _minors_detail(F, space, tol, threads=1):
    n = space.n
    if n > BRUTE_FORCE_MAX_N:
        raise TooLarge(f"principal-minor recovery is capped at n = {BRUTE_FORCE_MAX_N}")
    masks = list(range(1, 1 << n))

    def one(mask):
        phi = indicator(space, _mask_subset(mask, n))
        _, B_Pi, infl, _ = _dpp_factor(F, phi, len(phi.ess_support), tol)
        return B_Pi, infl

    parts = _map(one, masks, threads)
    B = np.ones(1 << n, dtype=complex)
    for mask, (val, _) in zip(masks, parts):
        B[mask] = val
    minors = _moebius(B, n)
    stderr = None
    if isinstance(F, Empirical):
        I = np.zeros((len(F.weights), 1 << n), dtype=complex)
        for mask, (_, infl) in zip(masks, parts):
            I[:, mask] = infl
        I = _moebius(I.T, n).T
        stderr = {_mask_subset(m, n): _weighted_se(F.weights, I[:, m], F.m) for m in masks}
    out = {_mask_subset(m, n): complex(minors[m]) for m in masks}
    return out, stderr


def recover_principal_minors(F: PgfOracle, space: GroundSpace, tol: Tolerances = DEFAULT_TOLERANCES) -> dict:
    return _minors_detail(F, space, tol)[0]


# full pipeline -------------------------------------------------------------------

def _default_windows(space: GroundSpace) -> list[frozenset]:
    singles = [frozenset([i]) for i in range(space.n)]
    full = frozenset(range(space.n))
    return singles if space.n == 1 else singles + [full]


def _grid_factor(F, phi, tol, degree_bound, bounded):
    scale = 1.0
    for attempt in range(RESCALE_TRIES + 1):
        try:
            target = phi.scaled(scale) if scale != 1.0 else phi
            return factor_at(F, target, degree_bound, tol, bounded=bounded), scale
        except DivisionNearZero:
            if attempt == RESCALE_TRIES:
                raise
            scale *= RESCALE


def _run(F: PgfOracle, space: GroundSpace, options: DisentangleOptions, general: bool) -> DisentangleResult:
    tol = options.tol
    mode = "empirical" if isinstance(F, Empirical) else "exact"
    flags: dict = {}
    diagnostics: dict = {}

    nu_measure = None
    nu_se = None
    if not general:
        try:
            atoms = _intensity_detail(F, space, tol, options.threads)
            nu = np.array([a.nu for a in atoms])
            if mode == "empirical":
                nu_se = np.array([a.stderr for a in atoms])
                slack = 5 * nu_se
            else:
                slack = np.full(space.n, tol.nu_abs)
            diagnostics["nu_log_imag_max"] = max(a.log_imag for a in atoms)
            diagnostics["nu_rescaled_atoms"] = [i for i, a in enumerate(atoms) if a.scale != 1.0]
            if diagnostics["nu_log_imag_max"] >= tol.log_imag:
                flags["recovered_nu"] = "log B_N has a non-negligible imaginary part"
            if np.any(nu < -slack):
                flags["recovered_nu"] = "negative intensity beyond tolerance: input is not Poisson + DPP"
            nu_measure = IntensityMeasure(space, np.clip(nu, 0, None))
            diagnostics["nu_raw"] = nu
        except Exception as exc:  # noqa: BLE001 - reported per field
            flags["recovered_nu"] = f"{type(exc).__name__}: {exc}"

    windows = [frozenset(w) for w in (options.windows if options.windows is not None else _default_windows(space))]
    spectra: dict = {}
    spectra_se: dict | None = {} if mode == "empirical" else None
    wb = options.degree_bound if general else None

    def window_job(w):
        try:
            return w, _window_spectrum(F, space, sorted(w), wb, tol, bounded=not general), None
        except Exception as exc:  # noqa: BLE001
            return w, None, f"{type(exc).__name__}: {exc}"

    for w, res, err in _map(window_job, windows, options.threads):
        if err is not None:
            flags[f"window_spectra[{sorted(w)}]"] = err
            continue
        spectra[w] = res[0]
        if spectra_se is not None:
            spectra_se[w] = res[1]

    minors = minors_se = None
    if options.minors and not general:
        if space.n <= BRUTE_FORCE_MAX_N:
            try:
                minors, minors_se = _minors_detail(F, space, tol, options.threads)
            except Exception as exc:  # noqa: BLE001
                flags["principal_minors"] = f"{type(exc).__name__}: {exc}"
        else:
            diagnostics["principal_minors"] = f"skipped: n > {BRUTE_FORCE_MAX_N}"

    grid = list(options.phi_grid) if options.phi_grid is not None else phi_grid(
        space, options.grid_size, options.grid_low, options.grid_high, options.grid_seed
    )

    def grid_job(phi):
        try:
            return _grid_factor(F, phi, tol, wb, not general), None
        except Exception as exc:  # noqa: BLE001
            return None, f"{type(exc).__name__}: {exc}"

    per_phi = []
    residuals = []
    consistency = []
    nonvanishing = [] if general else None
    for k, (res, err) in enumerate(_map(grid_job, grid, options.threads)):
        if err is not None:
            flags[f"per_phi_factors[{k}]"] = err
            continue
        fac, scale = res
        per_phi.append(fac)
        if scale != 1.0:
            diagnostics.setdefault("grid_rescaled", []).append(k)
        if fac.F_value != 0:
            residuals.append(abs(fac.F_value - fac.B_N * fac.B_Pi) / abs(fac.F_value))
        if nonvanishing is not None:
            nonvanishing.append(fac.B_N)
        if nu_measure is not None:
            predicted = pgf_poisson(nu_measure, fac.phi)
            consistency.append(abs(fac.B_N - predicted) / abs(predicted))
    diagnostics["max_factor_residual"] = max(residuals, default=0.0)
    if consistency:
        diagnostics["max_poisson_consistency"] = max(consistency)
    if mode == "exact" and diagnostics["max_factor_residual"] >= tol.residual_rel:
        flags["per_phi_factors"] = "factorisation residual above tolerance"

    result = DisentangleResult(
        space=space,
        mode=mode,
        recovered_nu=nu_measure,
        window_spectra=spectra,
        principal_minors=minors,
        per_phi_factors=per_phi,
        diagnostics=diagnostics,
        nu_stderr=nu_se,
        spectra_stderr=spectra_se,
        minors_stderr=minors_se,
        nonvanishing_values=nonvanishing,
        flags=flags,
    )
    if mode == "empirical" and options.bootstrap > 0 and not general:
        _bootstrap(F, space, options, result)
    return result


def _bootstrap(F: Empirical, space: GroundSpace, options: DisentangleOptions, result: DisentangleResult) -> None:
    """Resampling standard errors for the intensity and window spectra."""
    from .samplers import SampleBatch

    rng = np.random.default_rng(options.bootstrap_seed)
    nus, specs = [], {w: [] for w in result.window_spectra}
    p = F.weights / F.m
    for _ in range(options.bootstrap):
        w = rng.multinomial(F.m, p)
        keep = w > 0
        counts = np.repeat(F.rows[keep], w[keep], axis=0)
        Fb = Empirical(SampleBatch(space, counts))
        try:
            nus.append([a.nu for a in _intensity_detail(Fb, space, options.tol)])
            for win in specs:
                lam = _window_spectrum(Fb, space, sorted(win), None, options.tol)[0]
                if lam.size == result.window_spectra[win].size:
                    specs[win].append(lam)
        except Exception:  # noqa: BLE001 - a failed replicate is dropped
            continue
    if nus:
        result.diagnostics["bootstrap_nu_stderr"] = np.std(np.array(nus), axis=0, ddof=1)
    result.diagnostics["bootstrap_spectra_stderr"] = {
        w: np.std(np.array(v), axis=0, ddof=1) for w, v in specs.items() if len(v) > 1
    }
    result.diagnostics["bootstrap_replicates"] = len(nus)


def disentangle(F: PgfOracle, space: GroundSpace, options: DisentangleOptions | None = None) -> DisentangleResult:
    return _run(F, space, options or DisentangleOptions(), general=False)


def disentangle_general(
    F: PgfOracle, nonvanishing_hint: None = None, space: GroundSpace | None = None,
    options: DisentangleOptions | None = None,
) -> DisentangleResult:
    """Split a product of a zero-free factor and a zero-determined factor.

    No parametric form is assumed for the zero-free factor (the hint is
    reserved and must be None); its values ``F(phi) / B_Xi(phi)`` on the
    grid are returned in ``nonvanishing_values``.  The zero count of the
    other factor is not bounded by ``|supp phi|`` here, so the radius search
    runs until the count stabilises unless ``options.degree_bound`` is set.
    """
    if nonvanishing_hint is not None:
        raise ValueError("nonvanishing_hint is reserved; pass None")
    if space is None:
        raise ValueError("space is required")
    return _run(F, space, options or DisentangleOptions(), general=True)


# divisibility -------------------------------------------------------------------

@dataclass
class NthRootReport:
    n: int
    values: np.ndarray
    roots: np.ndarray
    expected: np.ndarray | None
    max_rel_error: float | None
    multiplicative_error: float | None
    passed: bool | None


def _poisson_intensity(F: PgfOracle) -> IntensityMeasure | None:
    if isinstance(F, ExactPoisson):
        return F.nu
    if isinstance(F, ExactProduct) and all(isinstance(f, ExactPoisson) for f in F.factors):
        nu = sum(f.nu.nu for f in F.factors)
        return IntensityMeasure(F.factors[0].nu.space, nu)
    return None


def nth_root_check(
    F: PgfOracle, n: int, phi_grid: Sequence[TestFunction], rtol: float = 1e-10
) -> NthRootReport:
    """n-th roots of F on nonnegative test functions.

    For Poisson inputs the roots must equal the functional of intensity
    ``nu / n`` and be multiplicative over disjoint supports; otherwise the
    roots are reported without a verdict.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    values = np.array([F(phi) for phi in phi_grid], dtype=complex)
    bad = (values.real <= 0) | (np.abs(values.imag) > 1e-12 * np.abs(values))
    if np.any(bad):
        raise NonPositiveValue(f"F is not positive on grid entries {np.flatnonzero(bad).tolist()}")
    roots = values.real ** (1.0 / n)
    nu = _poisson_intensity(F)
    if nu is None:
        return NthRootReport(n, values.real, roots, None, None, None, None)
    part = IntensityMeasure(nu.space, nu.nu / n)
    expected = np.array([pgf_poisson(part, phi).real for phi in phi_grid])
    rel = float(np.max(np.abs(roots - expected) / expected, initial=0.0))
    mult = 0.0
    for phi in phi_grid:
        S = phi.support_index
        if S.size < 2:
            continue
        a = phi.phi.copy()
        b = phi.phi.copy()
        a[S[S.size // 2:]] = 0
        b[S[: S.size // 2]] = 0
        ra = F(TestFunction(phi.space, a)).real ** (1.0 / n)
        rb = F(TestFunction(phi.space, b)).real ** (1.0 / n)
        whole = F(phi).real ** (1.0 / n)
        mult = max(mult, abs(whole - ra * rb) / whole)
    passed = bool(rel <= rtol and mult <= rtol and np.all(roots > 0))
    return NthRootReport(n, values.real, roots, expected, rel, mult, passed)
