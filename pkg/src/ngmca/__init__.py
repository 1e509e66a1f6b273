"""Sparse non-negative blind source separation with the nGMCA algorithm family.

Sparsity can be enforced on the sources themselves, on their orthonormal or
undecimated wavelet coefficients (synthesis or analysis form) or on the spike
trains of a convolutive model, optionally with reweighted thresholds.
"""
from .datagen import Dataset, load_matrix, make_dataset, save_matrix
from .evaluation import EvalScores, evaluate, hoyer_sparseness
from .separation import (
    VARIANTS,
    NgmcaConfig,
    Problem,
    SeparationResult,
    run_ngmca,
    sparse_hals_baseline,
)
from .transforms import (
    Convolution,
    ConvolutionKernel,
    Identity,
    OrthoWavelet,
    UndecimatedWavelet,
)

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "load_matrix",
    "make_dataset",
    "save_matrix",
    "EvalScores",
    "evaluate",
    "hoyer_sparseness",
    "VARIANTS",
    "NgmcaConfig",
    "Problem",
    "SeparationResult",
    "run_ngmca",
    "sparse_hals_baseline",
    "Convolution",
    "ConvolutionKernel",
    "Identity",
    "OrthoWavelet",
    "UndecimatedWavelet",
]
