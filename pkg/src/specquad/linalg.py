"""Cholesky with escalating diagonal jitter."""

import numpy as np
from scipy import linalg as sla

JITTER_START = 1e-8
JITTER_MAX = 1e-4


class CholeskyError(np.linalg.LinAlgError):
    pass


def jittered_cholesky(K, jitter_start=JITTER_START, jitter_max=JITTER_MAX):
    """Lower Cholesky factor of ``K``, adding jitter only on failure.

    Tries ``K`` as given, then ``K + j I`` for j = jitter_start, 10 x jitter_start,
    ... up to ``jitter_max``.

    Returns
    -------
    L : (n, n) ndarray
    jitter : float
        The diagonal amount that was added (0.0 if none).
    """
    K = np.asarray(K, dtype=float)
    n = K.shape[0]
    if n == 0:
        return np.zeros((0, 0)), 0.0
    jitter = 0.0
    while True:
        try:
            A = K if jitter == 0.0 else K + jitter * np.eye(n)
            return sla.cholesky(A, lower=True, check_finite=True), jitter
        except (np.linalg.LinAlgError, ValueError):
            pass
        jitter = jitter_start if jitter == 0.0 else jitter * 10.0
        if jitter > jitter_max * (1 + 1e-12):
            raise CholeskyError(
                f"matrix of size {n} not positive definite after jitter {jitter_max:g}"
            )


def cho_solve(L, b):
    return sla.cho_solve((L, True), b, check_finite=False)


def solve_lower(L, b):
    return sla.solve_triangular(L, b, lower=True, check_finite=False)


def logdet_from_cholesky(L):
    return 2.0 * np.sum(np.log(np.diag(L)))
