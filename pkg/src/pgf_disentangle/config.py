"""Numerical tolerances shared across modules.

Every tolerance has a fixed default; callers (and the CLI's
``--tolerance key=value`` flag) may override individual fields.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace


@dataclass(frozen=True)
class Tolerances:
    hermitian: float = 1e-12
    spectral_clamp: float = 1e-10
    eigen_zero: float = 1e-10
    gram_schmidt_pivot: float = 1e-12
    winding_residue: float = 0.01
    quadrature_rel: float = 1e-9
    quadrature_min_nodes: int = 64
    quadrature_max_nodes: int = 8192
    contour_clearance: float = 1e-6
    contour_retries: int = 5
    contour_perturb: float = 1.07
    newton_iterations: int = 10
    merge: float = 1e-7
    division_floor: float = 1e-12
    unit_zero_gap: float = 1e-9
    log_imag: float = 1e-8
    variance_eta: float = 0.2
    max_radius: float = 1e9
    blind_growth: float = 4.0
    blind_stable_span: float = 1024.0
    # acceptance-style checks used by the CLI report
    nu_abs: float = 1e-7
    spectrum_abs: float = 1e-6
    minor_abs: float = 1e-7
    residual_rel: float = 1e-8

    def override(self, **changes: float) -> "Tolerances":
        known = {f.name: f.type for f in fields(self)}
        bad = sorted(set(changes) - set(known))
        if bad:
            raise KeyError(f"unknown tolerance key(s): {', '.join(bad)}")
        cast = {k: (int(v) if isinstance(getattr(self, k), int) else float(v)) for k, v in changes.items()}
        return replace(self, **cast)

    def as_dict(self) -> dict:
        return asdict(self)


DEFAULT_TOLERANCES = Tolerances()
