"""Minimal dense-tensor stack: taped autodiff, NN layers, spectral
normalization, Adam, and a finite-difference gradient checker."""

from . import core, kernels, layers
from .adam import Adam, clip_global_norm
from .core import NumericsError, Tape, Tensor, numeric_checks
from .gradcheck import GradCheckReport, check_gradients
from .spectral import SpectralNormState, power_iteration_scope, spectral_normalize

__all__ = [
    "Adam",
    "GradCheckReport",
    "NumericsError",
    "SpectralNormState",
    "Tape",
    "Tensor",
    "check_gradients",
    "clip_global_norm",
    "core",
    "kernels",
    "layers",
    "numeric_checks",
    "power_iteration_scope",
    "spectral_normalize",
]
