"""Zeros of ``z -> B(z phi)`` and reconstruction from zeros.

Three routes:

* ``zeros_from_kernel``: eigenvalues of the compressed kernel (needs K).
* ``zeros_by_contour``: argument principle plus Delves-Lyness power sums on
  a circle; needs only evaluations of the function (and optionally its
  logarithmic derivative).
* ``zeros_by_fit``: for sample-based functionals, a weighted fit of
  ``exp(c z) * prod_j (1 + lam_j z)`` to the low-order Taylor coefficients.
  The zeros of such functionals lie outside the disk where the Monte Carlo
  estimate has bounded variance, so a circle around them is not usable.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import companion
from scipy.optimize import least_squares

from .config import DEFAULT_TOLERANCES, Tolerances
from .model import Kernel, TestFunction
from .pgf import EntireFunction, _compressed


NESTING_RATIO = 16.0


class ContourThroughZero(ArithmeticError):
    pass


class NonIntegerWindingNumber(ArithmeticError):
    pass


class QuadratureNotConverged(ArithmeticError):
    pass


class ZeroAtOrigin(ValueError):
    pass


class DegreeBoundExceeded(ArithmeticError):
    pass


class FitFailed(ArithmeticError):
    pass


@dataclass(frozen=True)
class ZeroSet:
    zeros: np.ndarray
    multiplicities: np.ndarray
    search_radius: float
    winding_residual: float = 0.0
    nodes: int = 0
    uncertainty: np.ndarray | None = None

    def __post_init__(self):
        z = np.asarray(self.zeros, dtype=complex).reshape(-1)
        m = np.asarray(self.multiplicities, dtype=int).reshape(-1)
        if z.shape != m.shape:
            raise ValueError("zeros and multiplicities differ in length")
        if np.any(z == 0):
            raise ZeroAtOrigin("a zero set of B(z phi) cannot contain the origin")
        order = np.lexsort((z.imag, z.real))
        object.__setattr__(self, "zeros", z[order])
        object.__setattr__(self, "multiplicities", m[order])
        if self.uncertainty is not None:
            object.__setattr__(self, "uncertainty", np.asarray(self.uncertainty, dtype=float).reshape(-1)[order])

    @classmethod
    def empty(cls, radius: float = 0.0, **kw) -> "ZeroSet":
        return cls(np.zeros(0, complex), np.zeros(0, int), radius, **kw)

    @property
    def total_count(self) -> int:
        return int(self.multiplicities.sum())

    def expanded(self) -> np.ndarray:
        return np.repeat(self.zeros, self.multiplicities)

    def eigenvalues(self) -> np.ndarray:
        """Nonzero eigenvalues ``-1/x`` of the operator behind the zeros."""
        return -1.0 / self.expanded()

    def __len__(self) -> int:
        return self.zeros.size


# helpers ---------------------------------------------------------------------

def _merge(points: np.ndarray, mult: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray]:
    """Greedy single-linkage merge; merged point is the multiplicity-weighted mean."""
    pts = list(points)
    ms = list(mult)
    merged = True
    while merged and len(pts) > 1:
        merged = False
        for i, j in itertools.combinations(range(len(pts)), 2):
            if abs(pts[i] - pts[j]) <= tol:
                m = ms[i] + ms[j]
                pts[i] = (ms[i] * pts[i] + ms[j] * pts[j]) / m
                ms[i] = m
                del pts[j], ms[j]
                merged = True
                break
    return np.array(pts, dtype=complex), np.array(ms, dtype=int)


def match_multisets(a, b) -> np.ndarray:
    """Pairwise distances of the optimal one-to-one matching of two equal-size multisets."""
    from scipy.optimize import linear_sum_assignment

    a = np.asarray(a, dtype=complex).reshape(-1)
    b = np.asarray(b, dtype=complex).reshape(-1)
    if a.size != b.size:
        raise ValueError(f"multisets differ in size ({a.size} vs {b.size})")
    if a.size == 0:
        return np.zeros(0)
    cost = np.abs(a[:, None] - b[None, :])
    r, c = linear_sum_assignment(cost)
    return cost[r, c]


def _logderiv(fn: EntireFunction | Callable, radius: float) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(fn, EntireFunction) and fn.logderiv is not None:
        return fn.logderiv
    f = fn.f if isinstance(fn, EntireFunction) else (lambda z: np.asarray([complex(fn(w)) for w in np.ravel(z)]))
    step = 1e-6 * radius

    def h(z):
        z = np.asarray(z, dtype=complex)
        with np.errstate(divide="ignore", invalid="ignore"):
            return (f(z + step) - f(z - step)) / (2 * step * f(z))

    return h


def _values(fn, z: np.ndarray) -> np.ndarray:
    if isinstance(fn, EntireFunction):
        return fn.f(z)
    return np.asarray([complex(fn(w)) for w in np.ravel(z)]).reshape(np.shape(z))


def _newton_identities(p: np.ndarray) -> np.ndarray:
    """Power sums p[1..N] -> elementary symmetric polynomials e[0..N]."""
    N = p.size - 1
    e = np.zeros(N + 1, dtype=complex)
    e[0] = 1.0
    for k in range(1, N + 1):
        acc = 0j
        for i in range(1, k + 1):
            acc += (-1) ** (i - 1) * e[k - i] * p[i]
        e[k] = acc / k
    return e


def _roots_from_power_sums(p: np.ndarray) -> np.ndarray:
    N = p.size - 1
    if N == 0:
        return np.zeros(0, dtype=complex)
    e = _newton_identities(p)
    coeffs = np.array([(-1) ** k * e[k] for k in range(N + 1)])
    if N == 1:
        return np.array([-coeffs[1]], dtype=complex)
    return np.linalg.eigvals(companion(coeffs))


@dataclass
class _Moments:
    p: np.ndarray
    raw_count: complex
    nodes: int


def _contour_moments(
    h: Callable, radius: float, known: np.ndarray, known_mult: np.ndarray,
    degree_cap: int | None, tol: Tolerances,
) -> _Moments:
    """Trapezoidal power sums of the zeros inside |z| = radius, minus known zeros.

    Node count doubles from ``quadrature_min_nodes`` until two successive
    estimates agree to ``quadrature_rel`` (relative to radius**k).
    """
    n = tol.quadrature_min_nodes
    theta = 2 * np.pi * np.arange(n) / n
    z = radius * np.exp(1j * theta)
    hz = h(z)
    prev = None
    while True:
        if not np.all(np.isfinite(hz)):
            raise ContourThroughZero(f"log-derivative not finite on |z| = {radius:.6g}")
        # a zero at distance d from the circle makes h spike by ~1/d above its
        # level; the constant part (an exponential factor) is not a spike
        spike = np.abs(hz - np.mean(hz))
        if np.max(spike) * tol.contour_clearance * radius > 1.0:
            raise ContourThroughZero(f"a zero lies within {tol.contour_clearance:g} * radius of |z| = {radius:.6g}")
        raw0 = np.mean(z * hz)
        count = int(round(raw0.real)) - int(known_mult.sum())
        count = max(count, 0)
        if degree_cap is not None:
            count = min(count, degree_cap + 1)
        k = np.arange(count + 1)
        zk = z[None, :] ** (k[:, None] + 1)
        p = np.mean(zk * hz[None, :], axis=1)
        if known.size:
            p = p - np.array([np.sum(known_mult * known**kk) for kk in k])
        floor = 64 * np.finfo(float).eps * np.max(np.abs(hz)) * radius ** (k + 1)
        if prev is not None and prev[0].size == p.size:
            scale = radius**k
            diff = np.abs(p - prev[0])
            if np.all(diff <= np.maximum(tol.quadrature_rel * scale, floor)) and abs(raw0 - prev[1]) <= max(
                tol.quadrature_rel, floor[0]
            ):
                return _Moments(p, raw0, n)
        if 2 * n > tol.quadrature_max_nodes:
            raise QuadratureNotConverged(
                f"power sums on |z| = {radius:.6g} not converged with {n} nodes"
            )
        prev = (p, raw0)
        theta_new = 2 * np.pi * (np.arange(n) + 0.5) / n
        z_new = radius * np.exp(1j * theta_new)
        h_new = h(z_new)
        z = np.stack([z, z_new], axis=1).reshape(-1)
        hz = np.stack([hz, h_new], axis=1).reshape(-1)
        n *= 2


def _polish(h: Callable, x: np.ndarray, m: np.ndarray, iterations: int) -> np.ndarray:
    """Simultaneous Newton steps on the deflated log-derivative (Aberth form)."""
    x = x.copy()
    for _ in range(iterations):
        hx = h(x)
        diff = x[:, None] - x[None, :]
        np.fill_diagonal(diff, np.inf)
        defl = hx - np.sum(m[None, :] / diff, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = m / defl
        ok = np.isfinite(step)
        x[ok] = x[ok] - step[ok]
        if np.all(np.abs(step[ok]) <= 4 * np.finfo(float).eps * np.abs(x[ok])):
            break
    return x


def _contour_once(fn, h, radius, known, known_mult, degree_hint, tol):
    bulk = fn.bulk if isinstance(fn, EntireFunction) and fn.bulk is not None else h
    mom = _contour_moments(bulk, radius, known, known_mult, degree_hint, tol)
    total = int(round(mom.raw_count.real))
    residue = abs(mom.raw_count - total)
    if residue >= tol.winding_residue:
        raise NonIntegerWindingNumber(
            f"winding number {mom.raw_count:.6g} on |z| = {radius:.6g} is not an integer"
        )
    if degree_hint is not None and total > degree_hint:
        raise DegreeBoundExceeded(f"{total} zeros inside |z| = {radius:.6g} exceeds bound {degree_hint}")
    new = total - int(known_mult.sum())
    if new < 0:
        raise NonIntegerWindingNumber("fewer zeros inside the contour than already located")
    fresh = _roots_from_power_sums(mom.p[: new + 1])
    x = np.concatenate([known, fresh])
    m = np.concatenate([known_mult, np.ones(fresh.size, dtype=int)])
    if x.size:
        x = _polish(h, x, m, tol.newton_iterations)
        x, m = _merge(x, m, tol.merge * radius)
        if np.any(m > 1):
            x = _polish(h, x, m, tol.newton_iterations)
    return x, m, residue, mom.nodes


def zeros_by_contour(
    f: EntireFunction | Callable,
    radius: float,
    degree_hint: int | None = None,
    tol: Tolerances = DEFAULT_TOLERANCES,
) -> ZeroSet:
    """All zeros inside ``|z| = radius`` of an analytic ``f`` with ``f(0) = 1``.

    Raises ContourThroughZero, NonIntegerWindingNumber or
    QuadratureNotConverged once ``tol.contour_retries`` radius perturbations
    (factor ``tol.contour_perturb``) are exhausted.
    """
    none = (np.zeros(0, complex), np.zeros(0, int))
    first = _zeros_by_contour(f, radius, degree_hint, tol, *none)
    if not len(first) or np.min(np.abs(first.zeros)) >= radius / NESTING_RATIO:
        return first
    # zeros far inside the circle are swamped in the power sums by the outer
    # ones; resolve them on smaller circles and carry them outwards
    known, mult = none
    r = 2 * float(np.min(np.abs(first.zeros)))
    try:
        while True:
            res = _zeros_by_contour(f, min(r, radius), degree_hint, tol, known, mult)
            known, mult = res.zeros, res.multiplicities
            if res.search_radius >= radius:
                break
            r = 2 * res.search_radius
    except (ContourThroughZero, NonIntegerWindingNumber, QuadratureNotConverged, DegreeBoundExceeded):
        return first
    return res if res.total_count == first.total_count else first


def _zeros_by_contour(f, radius, degree_hint, tol, known, known_mult) -> ZeroSet:
    if radius <= 0:
        raise ValueError("radius must be positive")
    last = None
    r = float(radius)
    for _ in range(tol.contour_retries + 1):
        h = _logderiv(f, r)
        try:
            x, m, residue, nodes = _contour_once(f, h, r, known, known_mult, degree_hint, tol)
            return ZeroSet(x, m, r, residue, nodes)
        except (ContourThroughZero, NonIntegerWindingNumber, QuadratureNotConverged) as exc:
            last = exc
            r *= tol.contour_perturb
    raise last


def zeros_blind(
    f: EntireFunction | Callable,
    degree_bound: int | None = None,
    start_radius: float = 1.0,
    tol: Tolerances = DEFAULT_TOLERANCES,
) -> ZeroSet:
    """Locate zeros without knowing where they are.

    The radius grows by ``tol.blind_growth`` from ``start_radius``.  With a degree bound the
    search stops once that many zeros are found; without one it stops when
    the count has stayed unchanged while the radius grew by
    ``tol.blind_stable_span`` (two consecutive radii alone would stop inside
    the gap between a small zero and a much larger one).  Zeros found on
    smaller circles are kept and only the new ones are solved for, so small
    and large zeros are resolved at their own scale.  Gives up (returning
    what it has) at ``tol.max_radius``.
    """
    if degree_bound == 0:
        return ZeroSet.empty(start_radius)
    known = np.zeros(0, complex)
    mult = np.zeros(0, int)
    r = float(start_radius)
    prev_count = None
    since = r
    result = ZeroSet.empty(r)
    while True:
        result = _zeros_by_contour(f, r, degree_bound, tol, known, mult)
        known, mult = result.zeros, result.multiplicities
        count = result.total_count
        if count != prev_count:
            since = result.search_radius
        if degree_bound is not None and count >= degree_bound:
            return result
        if degree_bound is None and result.search_radius >= tol.blind_stable_span * since:
            return result
        if result.search_radius >= tol.max_radius:
            return result
        prev_count = count
        r = tol.blind_growth * max(r, result.search_radius)


def zeros_from_kernel(k: Kernel, phi: TestFunction, tol: Tolerances = DEFAULT_TOLERANCES) -> ZeroSet:
    T = _compressed(k, phi)
    if T.shape[0] == 0:
        return ZeroSet.empty(float("inf"))
    lam = np.linalg.eigvals(T)
    norm = np.linalg.norm(T, 2)
    lam = lam[np.abs(lam) >= tol.eigen_zero * norm] if norm > 0 else lam[:0]
    if lam.size == 0:
        return ZeroSet.empty(float("inf"))
    x = -1.0 / lam
    x, m = _merge(x, np.ones(x.size, int), tol.merge * np.max(np.abs(x)))
    return ZeroSet(x, m, float("inf"))


def polynomial_from_zeros(zs: ZeroSet) -> Callable:
    """``z -> prod (1 - z/x)^mult``; exactly 1 at the origin."""
    x = zs.zeros
    m = zs.multiplicities
    if np.any(x == 0):
        raise ZeroAtOrigin("zero at the origin")

    def P(z):
        arr = np.asarray(z, dtype=complex)
        out = np.ones(arr.shape, dtype=complex)
        for xi, mi in zip(x, m):
            out = out * (1 - arr / xi) ** mi
        return complex(out) if out.ndim == 0 else out

    return P


# sample-based route ------------------------------------------------------------

@dataclass
class FactorFit:
    """Weighted fit of ``exp(c z) prod (1 + lam_j z)`` to empirical coefficients.

    ``influence[u]`` is the first-order influence of distinct configuration
    ``u`` on ``theta = (c, lam_1..lam_d)``; the estimator satisfies
    ``theta_hat - theta ~ sum_u w_u influence[u] / M``.
    """

    c: float
    lam: np.ndarray
    cov: np.ndarray
    influence: np.ndarray
    weights: np.ndarray
    m: int
    orders: int
    cost: float
    lower: float
    upper: float
    zeros: ZeroSet = field(repr=False, default=None)

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([[self.c], self.lam])

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0, None))


def _factor_coeffs(theta: np.ndarray, orders: int) -> np.ndarray:
    c = theta[0]
    k = np.arange(orders + 1)
    ex = np.array([c**kk / math.factorial(kk) for kk in k])
    poly = np.array([1.0])
    for lam in theta[1:]:
        poly = np.convolve(poly, [1.0, lam])
    return np.convolve(ex, poly)[1 : orders + 1]


def _jacobian(fun, theta, step=1e-7):
    cols = []
    for i in range(theta.size):
        e = np.zeros_like(theta)
        hstep = step * max(1.0, abs(theta[i]))
        e[i] = hstep
        cols.append((fun(theta + e) - fun(theta - e)) / (2 * hstep))
    return np.stack(cols, axis=1)


def zeros_by_fit(empirical, phi: TestFunction, degree: int, tol: Tolerances = DEFAULT_TOLERANCES) -> FactorFit:
    """Fit the factorised form to an empirical functional along ``z phi``.

    Uses Taylor orders 1..degree+2 with the sample covariance as weight.
    Real ``phi`` only: the fitted ``lam_j`` are restricted to the interval
    that the spectrum of ``diag(phi) K`` occupies when ``K`` is a Hermitian
    positive contraction, the only kernels that can produce samples.
    """
    if not phi.is_real:
        raise FitFailed("sample-based factorisation needs a real-valued test function")
    C, w = empirical.polynomial_terms(phi)
    C = C.real
    M = empirical.m
    a = (w @ C) / M
    vals = phi.phi.real[phi.support_index]
    lo = min(0.0, float(vals.min(initial=0.0)))
    hi = max(0.0, float(vals.max(initial=0.0)))
    if degree == 0 or hi == lo:
        c = float(a[1]) if a.size > 1 else 0.0
        infl = (C[:, 1] - c)[:, None] if a.size > 1 else np.zeros((len(w), 1))
        cov = np.array([[np.sum(w * infl[:, 0] ** 2) / max(M - 1, 1) / M]])
        return FactorFit(c, np.zeros(0), cov, infl, w, M, 1, 0.0, lo, hi, ZeroSet.empty(0.0))
    orders = degree + 2
    if C.shape[1] < orders + 1:
        C = np.pad(C, ((0, 0), (0, orders + 1 - C.shape[1])))
        a = (w @ C) / M
    A = C[:, 1 : orders + 1]
    abar = a[1 : orders + 1]
    dev = A - abar
    if M < 2:
        raise FitFailed("need at least two samples")
    S = (w[:, None] * dev).T @ dev / (M - 1) / M
    ev, U = np.linalg.eigh(S)
    floor = max(ev.max(initial=0.0), 1e-300) * 1e-12
    if ev.max(initial=0.0) <= 0:
        raise FitFailed("empirical coefficients have zero variance")
    Winv_half = U / np.sqrt(np.maximum(ev, floor))  # whitening: r -> U^T r / sqrt(ev)

    def resid(theta):
        return Winv_half.T @ (_factor_coeffs(theta, orders) - abar)

    best = None
    grid = np.linspace(lo, hi, 6)[1:-1] if hi > lo else np.array([lo])
    starts = list(itertools.combinations_with_replacement(grid, degree))
    if len(starts) > 12:
        idx = np.linspace(0, len(starts) - 1, 12).round().astype(int)
        starts = [starts[i] for i in idx]
    lb = np.concatenate([[-np.inf], np.full(degree, lo)])
    ub = np.concatenate([[np.inf], np.full(degree, hi)])
    for lam0 in starts:
        lam0 = np.array(lam0) + np.linspace(0, 1e-3 * (hi - lo), degree)
        lam0 = np.clip(lam0, lo, hi)
        th0 = np.concatenate([[abar[0] - lam0.sum()], lam0])
        try:
            r = least_squares(resid, th0, bounds=(lb, ub), xtol=1e-14, ftol=1e-14, gtol=1e-14)
        except ValueError:
            continue
        if best is None or r.cost < best.cost:
            best = r
    if best is None or not np.all(np.isfinite(best.x)):
        raise FitFailed("factorised fit did not converge")
    theta = best.x
    J = _jacobian(lambda t: _factor_coeffs(t, orders), theta)
    Jw = Winv_half.T @ J
    info = Jw.T @ Jw
    try:
        info_inv = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        info_inv = np.linalg.pinv(info)
    G = info_inv @ Jw.T @ Winv_half.T  # theta_hat - theta ~ G (abar_hat - abar)
    infl = dev @ G.T
    cov = (w[:, None] * infl).T @ infl / (M - 1) / M
    lam = theta[1:]
    order = np.argsort(-np.abs(lam), kind="stable")
    lam = lam[order]
    infl = np.concatenate([infl[:, :1], infl[:, 1:][:, order]], axis=1)
    cov = (w[:, None] * infl).T @ infl / (M - 1) / M
    fit = FactorFit(float(theta[0]), lam, cov, infl, w, M, orders, float(best.cost), lo, hi)
    keep = np.abs(lam) > tol.eigen_zero * max(hi - lo, 1e-300)
    se = fit.stderr[1:]
    if np.any(keep):
        x = -1.0 / lam[keep]
        fit.zeros = ZeroSet(x, np.ones(x.size, int), float("nan"), uncertainty=se[keep] / lam[keep] ** 2)
    else:
        fit.zeros = ZeroSet.empty(float("nan"))
    return fit
