"""Draws of GP regression data under a known spectral-mixture kernel."""

import numpy as np

from specquad.data import Dataset
from specquad.linalg import jittered_cholesky
from specquad.spectral import NoiseModel, SpectralMixtureParams, gram_matrix

# Two well-separated periodicities; used by the ablation defaults.
TWO_COMPONENT = SpectralMixtureParams([0.6, 0.4], [[3.0], [12.0]], [[0.7], [1.0]])


def sample_dataset(theta, count, rng, noise=None, low=0.0, high=1.0):
    """``count`` inputs uniform on [low, high]^D with targets f(x) + noise,
    f ~ GP(0, k_theta)."""
    noise = noise or NoiseModel()
    X = rng.uniform(low, high, size=(count, theta.dim))
    K = gram_matrix(theta, X, noise=noise, add_noise=True)
    L, _ = jittered_cholesky(K)
    y = L @ rng.standard_normal(count)
    return Dataset(X, y)


def write_csv(dataset, path):
    header = ",".join([f"x{d}" for d in range(dataset.dim)] + ["y"])
    table = np.column_stack([dataset.inputs, dataset.targets])
    np.savetxt(path, table, delimiter=",", header=header, comments="", fmt="%.17g")
