"""Separate a Poisson + determinantal superposition on a finite space."""
from .config import DEFAULT_TOLERANCES, Tolerances
from .disentangle import (
    DisentangleOptions,
    DisentangleResult,
    Factorization,
    disentangle,
    disentangle_general,
    factor_at,
    nth_root_check,
    phi_grid,
    recover_intensity,
    recover_principal_minors,
    recover_window_spectra,
)
from .io import ConfigError, load_model, model_from_dict, model_to_dict
from .model import (
    Determinantal,
    GroundSpace,
    IntensityMeasure,
    Kernel,
    PointConfiguration,
    Poisson,
    Superposition,
    TestFunction,
    indicator,
)
from .pgf import (
    BlackBox,
    Empirical,
    ExactDpp,
    ExactPoisson,
    ExactProduct,
    evaluate_entire,
    oracle_for_model,
    pgf_dpp,
    pgf_empirical,
    pgf_poisson,
    pgf_superposition,
)
from .samplers import RngState, SampleBatch, sample_batch, sample_dpp, sample_poisson, sample_superposition
from .zeros import ZeroSet, zeros_blind, zeros_by_contour, zeros_by_fit, zeros_from_kernel

__all__ = [name for name in dir() if not name.startswith("_")]
