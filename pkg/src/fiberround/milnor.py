"""Left-invariant metrics on S^3 = SU(2) in a Milnor frame.

The frame ``X_1, X_2, X_3`` consists of the left-invariant fields generated by
the unit quaternions i, j, k, so that ``[X_i, X_j] = 2 X_k`` cyclically and the
metric ``diag(1, 1, 1)`` is the unit round metric.  A metric is given by its
eigenvalues ``lam_i = g(X_i, X_i)``.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .geometry import PinchingReport, verdict_from_extremes

ROUND_VOLUME = 2.0 * math.pi ** 2


@dataclasses.dataclass(frozen=True)
class MilnorMetricS3:
    lam1: float
    lam2: float
    lam3: float

    def __post_init__(self):
        for v in self.lambdas:
            if not (np.isfinite(v) and v > 0.0):
                raise ValueError(f"Milnor eigenvalues must be positive, got {self.lambdas}")

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([self.lam1, self.lam2, self.lam3], dtype=float)

    @classmethod
    def from_array(cls, lam) -> "MilnorMetricS3":
        lam = np.asarray(lam, dtype=float)
        return cls(float(lam[0]), float(lam[1]), float(lam[2]))

    @classmethod
    def berger(cls, fiber: float) -> "MilnorMetricS3":
        """Round metric with the Hopf-fibre direction scaled by ``fiber``."""
        return cls(1.0, 1.0, fiber)

    def is_round(self, tol: float = 0.0) -> bool:
        lam = self.lambdas
        return float(lam.max() - lam.min()) <= tol * float(lam.max())


def ricci_eigenvalues(m: MilnorMetricS3) -> np.ndarray:
    """Ricci curvature in the orthonormal frame ``X_i / sqrt(lam_i)``.

    With ``[e_2, e_3] = c_1 e_1`` (cyclic), ``c_i = 2 lam_i / sqrt(lam_1 lam_2 lam_3)``
    and ``mu_i = (c_1 + c_2 + c_3)/2 - c_i`` one has
    ``Ric(e_1) = 2 mu_2 mu_3`` and cyclically.
    """
    lam = m.lambdas
    c = 2.0 * lam / math.sqrt(float(np.prod(lam)))
    mu = 0.5 * c.sum() - c
    return 2.0 * np.array([mu[1] * mu[2], mu[0] * mu[2], mu[0] * mu[1]])


def plane_curvatures(m: MilnorMetricS3) -> np.ndarray:
    """Sectional curvature of the coordinate plane orthogonal to ``e_k``.

    In dimension three ``K(n^perp) = Scal/2 - Ric(n, n)`` for a unit normal
    ``n``; the curvature operator is diagonal in a Milnor frame, so general
    planes interpolate these three values quadratically in ``n``.
    """
    ric = ricci_eigenvalues(m)
    return 0.5 * ric.sum() - ric


def scalar_curvature(m: MilnorMetricS3) -> float:
    return float(ricci_eigenvalues(m).sum())


def sectional_curvature(m: MilnorMetricS3, normals: np.ndarray) -> np.ndarray:
    """Sectional curvature of planes given by normals in the orthonormal frame."""
    n = np.atleast_2d(np.asarray(normals, dtype=float))
    n = n / np.linalg.norm(n, axis=1, keepdims=True)
    return (n ** 2) @ plane_curvatures(m)


def grassmannian_normals(n_samples: int) -> np.ndarray:
    """Deterministic quasi-uniform unit normals (Fibonacci lattice)."""
    k = np.arange(n_samples) + 0.5
    z = 1.0 - 2.0 * k / n_samples
    phi = math.pi * (3.0 - math.sqrt(5.0)) * k
    r = np.sqrt(1.0 - z ** 2)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def sectional_extremes_milnor(m: MilnorMetricS3, n_samples: int = 10_000) -> PinchingReport:
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    normals = np.vstack([np.eye(3), grassmannian_normals(n_samples)])
    K = sectional_curvature(m, normals)
    K_min, K_max = float(K.min()), float(K.max())
    ratio, verdict = verdict_from_extremes(K_min, K_max)
    return PinchingReport(K_min, K_max, ratio, verdict, normals.shape[0])


def total_volume(m: MilnorMetricS3) -> float:
    return ROUND_VOLUME * math.sqrt(float(np.prod(m.lambdas)))


# --- independent oracle: curvature by finite differences in a chart ---------

def _left_frame(q: np.ndarray) -> np.ndarray:
    """Rows are q*i, q*j, q*k for the unit quaternion q = (w, x, y, z)."""
    w, x, y, z = q
    return np.array([
        [-x, w, z, -y],
        [-y, -z, w, x],
        [-z, y, -x, w],
    ])


def _chart_metric(lam: np.ndarray, x: np.ndarray) -> np.ndarray:
    # gnomonic chart x -> (1, x)/sqrt(1 + |x|^2) centred at the identity
    s = math.sqrt(1.0 + float(x @ x))
    p = np.concatenate([[1.0], x])
    q = p / s
    J = np.zeros((4, 3))
    J[1:, :] = np.eye(3) / s
    J -= np.outer(p, x) / s ** 3
    xi = _left_frame(q) @ J
    return xi.T @ (lam[:, None] * xi)


def fd_ricci_tensor(m: MilnorMetricS3, h: float = 4e-3) -> tuple[np.ndarray, np.ndarray]:
    """Metric and Ricci tensor at the identity, from finite differences only.

    Coordinate vectors at the chart centre coincide with ``X_1, X_2, X_3``.
    Steps ``h`` and ``h/2`` are combined by Richardson extrapolation.
    """
    g, ric_h = _fd_ricci(m.lambdas, h)
    _, ric_h2 = _fd_ricci(m.lambdas, 0.5 * h)
    return g, (4.0 * ric_h2 - ric_h) / 3.0


def _fd_ricci(lam: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    I = np.eye(3)
    g0 = _chart_metric(lam, np.zeros(3))
    dg = np.zeros((3, 3, 3))  # dg[c, a, b] = d_c g_ab
    ddg = np.zeros((3, 3, 3, 3))  # ddg[c, d, a, b] = d_c d_d g_ab
    for c in range(3):
        gp = _chart_metric(lam, h * I[c])
        gm = _chart_metric(lam, -h * I[c])
        dg[c] = (gp - gm) / (2 * h)
        ddg[c, c] = (gp - 2 * g0 + gm) / h ** 2
        for d in range(c + 1, 3):
            gpp = _chart_metric(lam, h * (I[c] + I[d]))
            gpm = _chart_metric(lam, h * (I[c] - I[d]))
            gmp = _chart_metric(lam, h * (-I[c] + I[d]))
            gmm = _chart_metric(lam, -h * (I[c] + I[d]))
            ddg[c, d] = ddg[d, c] = (gpp - gpm - gmp + gmm) / (4 * h * h)
    ginv = np.linalg.inv(g0)
    # Gamma_low[f, b, c] = 1/2 (d_b g_fc + d_c g_fb - d_f g_bc)
    low = 0.5 * (np.einsum("bfc->fbc", dg) + np.einsum("cfb->fbc", dg) - dg)
    gamma = np.einsum("ef,fbc->ebc", ginv, low)
    # R_abcd with K(v, w) = R(v, w, w, v) / |v ^ w|^2
    R = 0.5 * (np.einsum("bcad->abcd", ddg) + np.einsum("adbc->abcd", ddg)
               - np.einsum("acbd->abcd", ddg) - np.einsum("bdac->abcd", ddg))
    R += np.einsum("ef,ebc,fad->abcd", g0, gamma, gamma) - np.einsum("ef,ebd,fac->abcd", g0, gamma, gamma)
    ric = np.einsum("ac,abcd->bd", ginv, R)
    return g0, ric


def fd_plane_extremes(m: MilnorMetricS3, h: float = 4e-3) -> tuple[float, float]:
    """Exact extremes over all 2-planes of the finite-difference curvature.

    Uses ``K(n^perp) = Scal/2 - Ric(n, n)`` for g-unit normals, so the
    extremes are generalised eigenvalues of ``(Scal/2) g - Ric`` against ``g``.
    """
    g, ric = fd_ricci_tensor(m, h)
    scal = float(np.trace(np.linalg.solve(g, ric)))
    # whiten by g^(-1/2) so the generalised problem becomes a symmetric one
    w, V = np.linalg.eigh(g)
    S = V @ np.diag(w ** -0.5) @ V.T
    A = S @ (0.5 * scal * g - ric) @ S
    ev = np.linalg.eigvalsh(0.5 * (A + A.T))
    return float(ev.min()), float(ev.max())
