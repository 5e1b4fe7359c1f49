"""Deep networks trained with layer-local errors, probed through their activation spectra."""

__version__ = "0.1.0"

from .attacks import AttackSpec, attacked_accuracy, attacked_activations
from .data import LabeledDataset, load_mnist, one_hot
from .estimators import LocalErrorClassifier, SpectrumAnalyzer
from .manifold import (
    eigen_spectrum,
    fit_power_law,
    participation_dimensionality,
    spectrum_report,
    theoretical_dimensionality,
    zeta_dimensionality,
)
from .network import LocalErrorNet, NetConfig, TrainConfig, init_network

__all__ = [
    "AttackSpec",
    "LabeledDataset",
    "LocalErrorClassifier",
    "LocalErrorNet",
    "NetConfig",
    "SpectrumAnalyzer",
    "TrainConfig",
    "attacked_accuracy",
    "attacked_activations",
    "eigen_spectrum",
    "fit_power_law",
    "init_network",
    "load_mnist",
    "one_hot",
    "participation_dimensionality",
    "spectrum_report",
    "theoretical_dimensionality",
    "zeta_dimensionality",
]
