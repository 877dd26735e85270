"""Orthogonal Procrustes fits of sampled sphere maps."""

from __future__ import annotations

import dataclasses

import numpy as np


@dataclasses.dataclass(frozen=True)
class OrthogonalFit:
    matrix: np.ndarray
    residual: float  # max_k |M x_k - y_k|


def fit_orthogonal(X: np.ndarray, Y: np.ndarray) -> OrthogonalFit:
    """Best ``M`` in O(3) (reflections allowed) with ``M x_k ~ y_k``.

    Maximises ``tr(M^T H)`` for the cross-covariance ``H = sum y_k x_k^T``
    through its singular value decomposition.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.shape != Y.shape or X.shape[1] != 3:
        raise ValueError("point sets must both have shape (n, 3)")
    H = Y.T @ X
    U, _, Vt = np.linalg.svd(H)
    M = U @ Vt
    residual = float(np.max(np.linalg.norm(X @ M.T - Y, axis=1)))
    return OrthogonalFit(M, residual)


def orthogonality_error(M: np.ndarray) -> float:
    return float(np.max(np.abs(M.T @ M - np.eye(M.shape[0]))))
