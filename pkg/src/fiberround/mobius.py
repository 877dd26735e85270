"""Conformal transformations of S^2 as Lorentz matrices.

A point ``x`` of the sphere is the null ray through ``(1, x)``; a matrix
``A`` in O+(3,1) acts by ``x -> y / a`` where ``(a, y) = A (1, x)``.  The
pullback of the round metric is ``m* g0 = a(x)^-2 g0`` with
``a(x) = A_00 + A_0i x_i``, so the log-conformal factor of ``m`` is
``-log a``.  Rotations and reflections are ``diag(1, Q)``; everything else is
a boost, and ``A = diag(1, Q) @ boost(b)`` is the polar decomposition.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
from scipy.spatial.transform import Rotation

from .geometry import ConformalMetricS2, gauss_curvature
from .harmonics import DEFAULT_L, HarmonicField, sphere_grid

ETA = np.diag([1.0, -1.0, -1.0, -1.0])


class MobiusFitError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


def boost_matrix(b) -> np.ndarray:
    """Boost with rapidity ``|b|`` towards ``b/|b|``; points crowd towards ``+b``."""
    b = np.asarray(b, dtype=float)
    s = float(np.linalg.norm(b))
    A = np.eye(4)
    if s == 0.0:
        return A
    n = b / s
    A[0, 0] = math.cosh(s)
    A[0, 1:] = A[1:, 0] = math.sinh(s) * n
    A[1:, 1:] += (math.cosh(s) - 1.0) * np.outer(n, n)
    return A


def orthogonal_matrix(Q) -> np.ndarray:
    A = np.eye(4)
    A[1:, 1:] = Q
    return A


@dataclasses.dataclass(frozen=True, eq=False)
class Mobius:
    matrix: np.ndarray

    def __post_init__(self):
        A = np.array(self.matrix, dtype=float)
        if A.shape != (4, 4):
            raise ValueError("Lorentz matrix must be 4x4")
        if A[0, 0] <= 0.0:
            raise ValueError("matrix reverses time orientation")
        err = np.max(np.abs(A.T @ ETA @ A - ETA))
        if err > 1e-9 * max(1.0, A[0, 0] ** 2):
            raise ValueError(f"matrix is not in O(3,1) (defect {err:.2e})")
        A.setflags(write=False)
        object.__setattr__(self, "matrix", A)

    @classmethod
    def identity(cls) -> "Mobius":
        return cls(np.eye(4))

    @classmethod
    def from_boost(cls, b) -> "Mobius":
        return cls(boost_matrix(b))

    @classmethod
    def from_orthogonal(cls, Q) -> "Mobius":
        return cls(orthogonal_matrix(Q))

    @classmethod
    def from_params(cls, rotvec=(0.0, 0.0, 0.0), boost=(0.0, 0.0, 0.0), reflect: bool = False) -> "Mobius":
        """``(rotation [then -I if reflect]) o boost``."""
        Q = Rotation.from_rotvec(np.asarray(rotvec, dtype=float)).as_matrix()
        if reflect:
            Q = -Q
        return cls(orthogonal_matrix(Q) @ boost_matrix(boost))

    def __matmul__(self, other: "Mobius") -> "Mobius":
        return Mobius(self.matrix @ other.matrix)

    def inverse(self) -> "Mobius":
        return Mobius(ETA @ self.matrix.T @ ETA)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        X = self.matrix[:, 0] + p @ self.matrix[:, 1:].T
        return X[:, 1:] / X[:, :1]

    def scale(self, points: np.ndarray) -> np.ndarray:
        """``a(x)``: the map shrinks lengths at ``x`` by this factor."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return self.matrix[0, 0] + p @ self.matrix[0, 1:]

    def log_factor(self, points: np.ndarray) -> np.ndarray:
        """``u`` with ``m* g0 = exp(2u) g0``."""
        return -np.log(self.scale(points))

    def differential(self, points: np.ndarray, vectors: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        v = np.atleast_2d(np.asarray(vectors, dtype=float))
        A = self.matrix
        X = A[:, 0] + p @ A[:, 1:].T
        dX = v @ A[:, 1:].T
        a, da = X[:, :1], dX[:, :1]
        return (dX[:, 1:] * a - X[:, 1:] * da) / a ** 2

    def decompose(self) -> tuple[np.ndarray, np.ndarray]:
        """``(Q, b)`` with ``self = diag(1, Q) @ boost(b)``."""
        A = self.matrix
        a0 = A[0, 1:]  # = sinh(s) n for the boost part
        sh = float(np.linalg.norm(a0))
        b = (math.asinh(sh) / sh) * a0 if sh > 0 else np.zeros(3)
        Q = (A @ ETA @ boost_matrix(b).T @ ETA)[1:, 1:]
        return Q, b

    @property
    def boost_vector(self) -> np.ndarray:
        return self.decompose()[1]

    def orthogonality_defect(self, points: np.ndarray) -> float:
        """Sup distance from the best O(3) fit of the map on ``points``."""
        from .procrustes import fit_orthogonal

        return fit_orthogonal(points, self(points)).residual

    def pullback_round(self, L: int = DEFAULT_L) -> ConformalMetricS2:
        """``m* g0``: a curvature-one metric in the conformal class of ``g0``."""
        grid = sphere_grid(L)
        return ConformalMetricS2(grid.analysis(self.log_factor(grid.points)).resized(L))

    def push_forward(self, g: ConformalMetricS2) -> ConformalMetricS2:
        """``m_* g = (m^-1)* g``, re-expanded at the degree of ``g``."""
        grid = g.grid()
        inv = self.inverse()
        x = grid.points
        values = g.u(inv(x)) + inv.log_factor(x)
        u = grid.analysis(values).resized(g.L)
        if g.antipodal_even:
            # only O(3) elements commute with -I; anything else breaks evenness
            return ConformalMetricS2(u, antipodal_even=u.odd_mass() < 1e-12)
        return ConformalMetricS2(u)


def random_mobius(rng: np.random.Generator, max_rapidity: float = 0.5) -> Mobius:
    """Random rotation composed with a boost of rapidity at most ``max_rapidity``.

    At the default resolution ``L = 24`` the log-factor of a boost with
    rapidity ``s`` has spectral tail ``~tanh(s/2)^25``, i.e. below 1e-15 for
    ``s <= 0.5``.
    """
    Q = Rotation.random(random_state=rng).as_matrix()
    direction = rng.standard_normal(3)
    direction /= np.linalg.norm(direction)
    s = max_rapidity * rng.uniform(0.2, 1.0)
    return Mobius(orthogonal_matrix(Q) @ boost_matrix(s * direction))


def mobius_extract(g: ConformalMetricS2, tol: float = 1e-6, max_iter: int = 30) -> Mobius:
    """Recover a boost ``B`` with ``B* g0 = g`` from a curvature-one metric.

    The rotation part of a Mobius map does not change ``m* g0``, so the fit is
    over the three boost parameters ``a = sinh(s) n`` of the model
    ``u(x) = -log(sqrt(1 + |a|^2) + a.x)`` (Gauss-Newton on grid nodes).
    """
    grid = g.grid()
    K = gauss_curvature(g, grid)
    dev = float(np.max(np.abs(K - 1.0)))
    if dev > tol:
        raise ValueError(f"metric is not of curvature one (max |K - 1| = {dev:.3e})")
    x = grid.points
    u = grid.synthesis(g.u)
    # exp(-u) is affine in x for the model, so its degree-1 projection is a
    # good starting point
    a = 3.0 / (4.0 * math.pi) * (grid.weights * np.exp(-u)) @ x
    for _ in range(max_iter):
        a0 = math.sqrt(1.0 + a @ a)
        den = a0 + x @ a
        r = -np.log(den) - u
        J = -(a / a0 + x) / den[:, None]
        step = np.linalg.lstsq(J, -r, rcond=None)[0]
        a = a + step
        if np.max(np.abs(step)) < 1e-15:
            break
    a0 = math.sqrt(1.0 + a @ a)
    residual = float(np.max(np.abs(-np.log(a0 + x @ a) - u)))
    if residual > tol:
        raise MobiusFitError(f"Mobius fit residual {residual:.3e} exceeds {tol:.1e}", residual)
    sh = float(np.linalg.norm(a))
    b = (math.asinh(sh) / sh) * a if sh > 0 else np.zeros(3)
    return Mobius.from_boost(b)
