"""Real spherical harmonics on the unit sphere, quadrature grids and transforms.

Coefficients are stored flat with index ``l*l + l + m`` (lexicographic in
``(l, m)`` with ``-l <= m <= l``).  The basis is orthonormal with respect to
the round area element and carries no Condon-Shortley phase::

    Y_l0  = Q_l^0(z)
    Y_lm  = sqrt(2) Q_l^m(z) Re (x + i y)^m      (m > 0)
    Y_l-m = sqrt(2) Q_l^m(z) Im (x + i y)^m      (m > 0)

where ``Q_l^m`` is the normalised associated Legendre function divided by
``sin^m``.  Written this way every basis function is a polynomial in the
ambient coordinates, so values and tangential gradients can be evaluated at
arbitrary points without pole singularities.
"""

from __future__ import annotations

import dataclasses
import functools
import json
import math
from typing import Iterable

import numba
import numpy as np

DEFAULT_L = 24


def n_coeffs(L: int) -> int:
    return (L + 1) ** 2


def index(l: int, m: int) -> int:
    return l * l + l + m


def degree_from_size(size: int) -> int:
    L = math.isqrt(size) - 1
    if (L + 1) ** 2 != size:
        raise ValueError(f"{size} is not a valid coefficient count (L+1)^2")
    return L


@functools.lru_cache(maxsize=None)
def lm_arrays(L: int) -> tuple[np.ndarray, np.ndarray]:
    """Degree and order of every flat coefficient slot."""
    ls = np.concatenate([np.full(2 * l + 1, l) for l in range(L + 1)])
    ms = np.concatenate([np.arange(-l, l + 1) for l in range(L + 1)])
    return ls, ms


@functools.lru_cache(maxsize=None)
def _recurrence_constants(L: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    a = np.zeros((L + 1, L + 1))
    b = np.zeros((L + 1, L + 1))
    diag = np.zeros(L + 1)
    diag[0] = 1.0 / math.sqrt(4.0 * math.pi)
    for m in range(1, L + 1):
        diag[m] = diag[m - 1] * math.sqrt((2 * m + 1) / (2 * m))
    for l in range(2, L + 1):
        for m in range(0, l - 1):
            a[l, m] = math.sqrt((4 * l * l - 1) / (l * l - m * m))
            b[l, m] = math.sqrt(((l - 1) ** 2 - m * m) / (4 * (l - 1) ** 2 - 1))
    return a, b, diag


def _legendre_q(z: np.ndarray, L: int, derivative: bool):
    """Q_l^m(z) and optionally dQ/dz, arrays of shape (npts, L+1, L+1) [l, m]."""
    a, b, diag = _recurrence_constants(L)
    npts = z.shape[0]
    q = np.zeros((npts, L + 1, L + 1))
    dq = np.zeros_like(q) if derivative else None
    zc = z[:, None]
    for l in range(L + 1):
        q[:, l, l] = diag[l]
        if l >= 1:
            c = math.sqrt(2 * l + 1)
            q[:, l, l - 1] = c * z * diag[l - 1]
            if derivative:
                dq[:, l, l - 1] = c * diag[l - 1]
        if l >= 2:
            ms = slice(0, l - 1)
            q[:, l, ms] = a[l, ms] * (zc * q[:, l - 1, ms] - b[l, ms] * q[:, l - 2, ms])
            if derivative:
                dq[:, l, ms] = a[l, ms] * (
                    q[:, l - 1, ms] + zc * dq[:, l - 1, ms] - b[l, ms] * dq[:, l - 2, ms]
                )
    return q, dq


def _gather(arr: np.ndarray, L: int) -> np.ndarray:
    ls, ms = lm_arrays(L)
    return arr[:, ls, np.abs(ms)]


def basis(points: np.ndarray, L: int, gradient: bool = False):
    """Evaluate all real harmonics of degree <= L at unit vectors ``points``.

    Returns ``Y`` of shape (npts, (L+1)^2); with ``gradient=True`` also the
    tangential gradients, shape (npts, (L+1)^2, 3).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    ls, ms = lm_arrays(L)
    mabs = np.abs(ms)
    w = x + 1j * y
    powers = np.ones((pts.shape[0], L + 1), dtype=complex)
    for m in range(1, L + 1):
        powers[:, m] = powers[:, m - 1] * w
    q, dq = _legendre_q(z, L, gradient)
    qg = _gather(q, L)
    pw = powers[:, mabs]
    trig = np.where(ms > 0, pw.real, np.where(ms < 0, pw.imag, 1.0))
    scale = np.where(ms == 0, 1.0, math.sqrt(2.0))
    Y = scale * qg * trig
    if not gradient:
        return Y
    # d/dx w^m = m w^(m-1), d/dy w^m = i m w^(m-1)
    pw1 = np.zeros_like(pw)
    pos = mabs > 0
    pw1[:, pos] = mabs[pos] * powers[:, mabs[pos] - 1]
    dtrig_dx = np.where(ms > 0, pw1.real, np.where(ms < 0, pw1.imag, 0.0))
    dtrig_dy = np.where(ms > 0, -pw1.imag, np.where(ms < 0, pw1.real, 0.0))
    G = np.empty(Y.shape + (3,))
    G[..., 0] = scale * qg * dtrig_dx
    G[..., 1] = scale * qg * dtrig_dy
    G[..., 2] = scale * _gather(dq, L) * trig
    radial = np.einsum("pkc,pc->pk", G, pts)
    G -= radial[..., None] * pts[:, None, :]
    return Y, G


def spherical_to_cartesian(colat: np.ndarray, lon: np.ndarray) -> np.ndarray:
    s = np.sin(colat)
    return np.stack([s * np.cos(lon), s * np.sin(lon), np.cos(colat)], axis=-1)


def cartesian_to_spherical(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(points, dtype=float)
    colat = np.arctan2(np.hypot(p[..., 0], p[..., 1]), p[..., 2])
    lon = np.arctan2(p[..., 1], p[..., 0])
    return colat, lon


@dataclasses.dataclass(frozen=True, eq=False)
class SphereGrid:
    """Gauss-Legendre x equiangular product grid carrying degree-``L`` fields.

    The grid is oversampled by ``dealias`` (3/2 by default) so products and
    exponentials of band-limited fields are evaluated without aliasing at the
    resolved degrees.  The longitude count is even, which makes the node set
    invariant under the antipodal map.
    """

    L: int = DEFAULT_L
    dealias: float = 1.5

    def __post_init__(self):
        if self.L < 0:
            raise ValueError("L must be non-negative")

    @functools.cached_property
    def quadrature_degree(self) -> int:
        return int(math.ceil(self.dealias * self.L))

    @functools.cached_property
    def nlat(self) -> int:
        return self.quadrature_degree + 1

    @functools.cached_property
    def nlon(self) -> int:
        return 2 * self.quadrature_degree + 2

    @functools.cached_property
    def _nodes_weights(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        z, wz = np.polynomial.legendre.leggauss(self.nlat)
        # symmetrise so that antipodal nodes coincide to the last bit
        z = 0.5 * (z - z[::-1])
        wz = 0.5 * (wz + wz[::-1])
        colat = np.arccos(z)[::-1]
        wz = wz[::-1]
        lon = 2.0 * np.pi * np.arange(self.nlon) / self.nlon
        C, P = np.meshgrid(colat, lon, indexing="ij")
        W = np.repeat(wz[:, None], self.nlon, axis=1) * (2.0 * np.pi / self.nlon)
        return C.ravel(), P.ravel(), W.ravel()

    @property
    def colatitudes(self) -> np.ndarray:
        return self._nodes_weights[0]

    @property
    def longitudes(self) -> np.ndarray:
        return self._nodes_weights[1]

    @property
    def weights(self) -> np.ndarray:
        return self._nodes_weights[2]

    @functools.cached_property
    def points(self) -> np.ndarray:
        pts = spherical_to_cartesian(self.colatitudes, self.longitudes)
        # exact antipodal pairing: node (i, j) <-> (nlat-1-i, j + nlon/2)
        pts = pts.reshape(self.nlat, self.nlon, 3)
        half = self.nlon // 2
        anti = -np.roll(pts[::-1], -half, axis=1)
        upper = self.nlat // 2
        pts[self.nlat - upper:] = anti[self.nlat - upper:]
        if self.nlat % 2:
            pts[upper, half:] = -pts[upper, :half]
        return pts.reshape(-1, 3)

    @property
    def size(self) -> int:
        return self.nlat * self.nlon

    @functools.cached_property
    def antipode_index(self) -> np.ndarray:
        i, j = np.divmod(np.arange(self.size), self.nlon)
        return (self.nlat - 1 - i) * self.nlon + (j + self.nlon // 2) % self.nlon

    @functools.cached_property
    def Y(self) -> np.ndarray:
        return basis(self.points, self.L)

    @functools.cached_property
    def weighted_Y(self) -> np.ndarray:
        return self.Y * self.weights[:, None]

    @functools.cached_property
    def laplacian_eigenvalues(self) -> np.ndarray:
        ls, _ = lm_arrays(self.L)
        return -(ls * (ls + 1)).astype(float)

    def integrate(self, values: np.ndarray) -> float:
        return float(np.dot(self.weights, values))

    def synthesis(self, field: "HarmonicField") -> np.ndarray:
        return self.Y @ field.resized(self.L).coeffs

    def analysis(self, values: np.ndarray) -> "HarmonicField":
        values = np.asarray(values, dtype=float)
        if values.shape != (self.size,):
            raise ValueError(f"expected {self.size} nodal values, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            bad = int(np.flatnonzero(~np.isfinite(values))[0])
            raise ValueError(f"non-finite value at node {bad} (point {self.points[bad]})")
        return HarmonicField(self.weighted_Y.T @ values)


@functools.lru_cache(maxsize=None)
def sphere_grid(L: int = DEFAULT_L, dealias: float = 1.5) -> SphereGrid:
    return SphereGrid(L, dealias)


@dataclasses.dataclass(frozen=True, eq=False)
class HarmonicField:
    """Real field on the sphere given by its harmonic coefficients."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        c.setflags(write=False)
        degree_from_size(c.size)
        object.__setattr__(self, "coeffs", c)

    @property
    def L(self) -> int:
        return degree_from_size(self.coeffs.size)

    @classmethod
    def zeros(cls, L: int = DEFAULT_L) -> "HarmonicField":
        return cls(np.zeros(n_coeffs(L)))

    @classmethod
    def from_modes(cls, modes: dict[tuple[int, int], float], L: int = DEFAULT_L) -> "HarmonicField":
        c = np.zeros(n_coeffs(L))
        for (l, m), v in modes.items():
            if not (0 <= l <= L and -l <= m <= l):
                raise ValueError(f"mode ({l}, {m}) outside degree {L}")
            c[index(l, m)] += v
        return cls(c)

    @classmethod
    def constant(cls, value: float, L: int = DEFAULT_L) -> "HarmonicField":
        return cls.from_modes({(0, 0): value * math.sqrt(4.0 * math.pi)}, L)

    def __getitem__(self, lm: tuple[int, int]) -> float:
        l, m = lm
        return float(self.coeffs[index(l, m)])

    def __add__(self, other: "HarmonicField") -> "HarmonicField":
        L = max(self.L, other.L)
        return HarmonicField(self.resized(L).coeffs + other.resized(L).coeffs)

    def __sub__(self, other: "HarmonicField") -> "HarmonicField":
        return self + (-1.0) * other

    def __mul__(self, scalar: float) -> "HarmonicField":
        return HarmonicField(self.coeffs * float(scalar))

    __rmul__ = __mul__

    def resized(self, L: int) -> "HarmonicField":
        """Truncate or zero-pad to degree ``L``."""
        if L == self.L:
            return self
        out = np.zeros(n_coeffs(L))
        k = min(n_coeffs(L), self.coeffs.size)
        out[:k] = self.coeffs[:k]
        return HarmonicField(out)

    def laplacian(self) -> "HarmonicField":
        ls, _ = lm_arrays(self.L)
        return HarmonicField(-(ls * (ls + 1)) * self.coeffs)

    def odd_part(self) -> "HarmonicField":
        ls, _ = lm_arrays(self.L)
        return HarmonicField(np.where(ls % 2 == 1, self.coeffs, 0.0))

    def even_part(self) -> "HarmonicField":
        return self - self.odd_part()

    def odd_mass(self) -> float:
        """Largest odd-degree coefficient magnitude."""
        ls, _ = lm_arrays(self.L)
        odd = self.coeffs[ls % 2 == 1]
        return float(np.max(np.abs(odd))) if odd.size else 0.0

    def sup_distance(self, other: "HarmonicField") -> float:
        """Coefficient sup-norm distance (the computable topology we use)."""
        return float(np.max(np.abs((self - other).coeffs)))

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return self.evaluator(points, gradient=False)

    def value_and_gradient(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.evaluator(points, gradient=True)

    @functools.cached_property
    def evaluator(self) -> "PointEvaluator":
        return PointEvaluator(self)

    # serialisation: flat (l, m, c) triples in lexicographic order
    def to_json(self) -> str:
        ls, ms = lm_arrays(self.L)
        triples = [[int(l), int(m), float(c)] for l, m, c in zip(ls, ms, self.coeffs)]
        return json.dumps({"format": "harmonic-field", "version": 1, "L": self.L,
                           "coefficients": triples}, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "HarmonicField":
        data = json.loads(text)
        return cls.from_triples(data["coefficients"], data.get("L"))

    @classmethod
    def from_triples(cls, triples: Iterable, L: int | None = None) -> "HarmonicField":
        triples = [(int(l), int(m), float(c)) for l, m, c in triples]
        if L is None:
            L = max((l for l, _, _ in triples), default=0)
        return cls.from_modes({(l, m): c for l, m, c in triples}, L)


def analysis(grid: SphereGrid, values: np.ndarray) -> HarmonicField:
    return grid.analysis(values)


def synthesis(grid: SphereGrid, field: HarmonicField) -> np.ndarray:
    return grid.synthesis(field)


def random_field(rng: np.random.Generator, L: int, *, lmin: int = 0, lmax: int | None = None,
                 decay: float = 2.0, even: bool = False) -> HarmonicField:
    """Random band-limited field with a power-law spectrum ``(1+l)^-decay``."""
    lmax = L if lmax is None else lmax
    ls, _ = lm_arrays(L)
    c = rng.standard_normal(n_coeffs(L)) * (1.0 + ls) ** (-decay)
    mask = (ls >= lmin) & (ls <= lmax)
    if even:
        mask &= ls % 2 == 0
    return HarmonicField(np.where(mask, c, 0.0))


@numba.njit(cache=True, nogil=True)
def _evaluate_points(a, b, diag, cc, cs, pts, want_grad, value, grad):
    L = cc.shape[0] - 1
    q = np.empty((L + 1, L + 1))
    dq = np.empty((L + 1, L + 1))
    pr = np.empty(L + 1)
    pi = np.empty(L + 1)
    for k in range(pts.shape[0]):
        x, y, z = pts[k, 0], pts[k, 1], pts[k, 2]
        # Q_l^m(z) and dQ/dz by the three-term recurrence in l
        for m in range(L + 1):
            q[m, m] = diag[m]
            dq[m, m] = 0.0
            if m + 1 <= L:
                q[m + 1, m] = a[m + 1, m] * z * diag[m]
                dq[m + 1, m] = a[m + 1, m] * diag[m]
            for l in range(m + 2, L + 1):
                q[l, m] = a[l, m] * (z * q[l - 1, m] - b[l, m] * q[l - 2, m])
                dq[l, m] = a[l, m] * (q[l - 1, m] + z * dq[l - 1, m] - b[l, m] * dq[l - 2, m])
        # Re/Im of (x + i y)^m
        pr[0], pi[0] = 1.0, 0.0
        for m in range(1, L + 1):
            pr[m] = pr[m - 1] * x - pi[m - 1] * y
            pi[m] = pr[m - 1] * y + pi[m - 1] * x
        val = 0.0
        gx = gy = gz = 0.0
        for m in range(L + 1):
            sc = 0.0
            ss = 0.0
            dc = 0.0
            ds = 0.0
            for l in range(m, L + 1):
                sc += q[l, m] * cc[l, m]
                ss += q[l, m] * cs[l, m]
                dc += dq[l, m] * cc[l, m]
                ds += dq[l, m] * cs[l, m]
            val += sc * pr[m] + ss * pi[m]
            if want_grad:
                gz += dc * pr[m] + ds * pi[m]
                if m > 0:
                    # d/dx (x + iy)^m = m (x + iy)^(m-1), d/dy = i m (x + iy)^(m-1)
                    gx += m * (sc * pr[m - 1] + ss * pi[m - 1])
                    gy += m * (-sc * pi[m - 1] + ss * pr[m - 1])
        value[k] = val
        if want_grad:
            radial = gx * x + gy * y + gz * z
            grad[k, 0] = gx - radial * x
            grad[k, 1] = gy - radial * y
            grad[k, 2] = gz - radial * z


class PointEvaluator:
    """Fast value/gradient evaluation of one field at scattered points.

    Sums over degree inside the Legendre recurrence instead of materialising
    the full basis, which is what the geodesic integrators need.
    """

    def __init__(self, field: HarmonicField):
        L = field.L
        self.L = L
        a, b, diag = _recurrence_constants(L)
        a = a.copy()
        for l in range(1, L + 1):
            a[l, l - 1] = math.sqrt(2 * l + 1)
        self._a, self._b, self._diag = a, b, diag
        cc = np.zeros((L + 1, L + 1))
        cs = np.zeros((L + 1, L + 1))
        r2 = math.sqrt(2.0)
        for l in range(L + 1):
            cc[l, 0] = field.coeffs[index(l, 0)]
            for m in range(1, l + 1):
                cc[l, m] = r2 * field.coeffs[index(l, m)]
                cs[l, m] = r2 * field.coeffs[index(l, -m)]
        self._cc, self._cs = cc, cs

    def __call__(self, points: np.ndarray, gradient: bool = True):
        pts = np.ascontiguousarray(np.atleast_2d(points), dtype=float)
        value = np.empty(pts.shape[0])
        grad = np.empty((pts.shape[0], 3))
        _evaluate_points(self._a, self._b, self._diag, self._cc, self._cs, pts, gradient, value, grad)
        return (value, grad) if gradient else value
