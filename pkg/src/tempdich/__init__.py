"""Numerical tools for tempered exponential dichotomies of random linear cocycles."""

from __future__ import annotations

__version__ = "0.1.0"

from .admissibility import detect_dichotomy, extract_projector, solve_window
from .dynamics import (
    BernoulliShift,
    Cocycle,
    ConstantGenerator,
    IntegerShift,
    IrrationalRotation,
    SteppedDiagonalGenerator,
    TableGenerator,
    evolve,
    orbit,
)
from .errors import CertificateFailure, ConfigError, DichotomyError
from .green import DichotomyData, gamma, gamma_tilde, green, green_table, solve_convolution
from .roughness import perturbed_green, roughness_constants
from .spectrum import build_return_cocycle, kac_check, lyapunov_qr, met_dichotomy, return_constants
from .weighted_spaces import WeightSpec, WindowedSequence, weighted_norm

__all__ = [
    "BernoulliShift", "CertificateFailure", "Cocycle", "ConfigError", "ConstantGenerator",
    "DichotomyData", "DichotomyError", "IntegerShift", "IrrationalRotation", "SteppedDiagonalGenerator",
    "TableGenerator", "WeightSpec", "WindowedSequence", "build_return_cocycle", "detect_dichotomy",
    "evolve", "extract_projector", "gamma", "gamma_tilde", "green", "green_table", "kac_check",
    "lyapunov_qr", "met_dichotomy", "orbit", "perturbed_green", "return_constants",
    "roughness_constants", "solve_convolution", "solve_window", "weighted_norm",
]
