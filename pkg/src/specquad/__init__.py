"""Gaussian-process regression marginalised over spectral-mixture kernels.

Likelihood evaluations of candidate kernels are combined with warped
(square-root) Bayesian quadrature over a kernel-between-kernels built from
the energy-distance MMD of the spectral Gaussian mixtures.
"""

from specquad.data import Dataset, DataSummary, NormalizationRecord, load_csv, normalize, split, summarize
from specquad.spectral import HyperPrior, NoiseModel, SpectralMixtureParams, kernel_eval, sample_prior
from specquad.hyperkernel import HyperKernelParams, hyper_gram, hyper_kernel, mmd_distance

__all__ = [
    "Dataset",
    "DataSummary",
    "NormalizationRecord",
    "HyperKernelParams",
    "HyperPrior",
    "NoiseModel",
    "SpectralMixtureParams",
    "hyper_gram",
    "hyper_kernel",
    "kernel_eval",
    "load_csv",
    "mmd_distance",
    "normalize",
    "sample_prior",
    "split",
    "summarize",
]

__version__ = "0.1.0"
