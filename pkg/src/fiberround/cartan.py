"""Isometries from round conformal metrics to the standard sphere.

For a curvature-one metric ``g`` the map

    phi(q) = exp_{g0,N}(L log_{g,N}(q)),

where ``L`` sends the g-Gram-Schmidt frame at ``N`` to the standard frame, is
the unique isometry ``(S^2, g) -> (S^2, g0)`` fixing ``N`` with that frame
correspondence.  Instead of shooting once per point, ``exp_{g,N}`` is
integrated along a fan of unit-speed geodesics and interpolated in geodesic
polar coordinates ``(r, alpha)`` (Chebyshev in ``r``, Fourier in ``alpha``);
``phi^-1`` is then a direct evaluation and ``phi`` a small Newton solve.
"""

from __future__ import annotations

import dataclasses
import functools
import math
from typing import Callable

import numpy as np
from numpy.polynomial import chebyshev
from scipy.spatial import cKDTree

from .geodesics import NORTH, GeodesicIntegrator, TangentFrame, gram_schmidt_frame, standard_frame
from .geometry import ConformalMetricS2, gauss_curvature

ROUND_TOL = 1e-6
DEFAULT_DEPTH = 4
CUT_RADIUS = 1e-9
FORMAT_HEADER = "# fiberround sphere-map"
FORMAT_VERSION = 1


# --- triangulation --------------------------------------------------------

@functools.lru_cache(maxsize=None)
def icosphere(depth: int = DEFAULT_DEPTH) -> tuple[np.ndarray, np.ndarray]:
    """Vertices and faces of the geodesic subdivision of the icosahedron."""
    t = (1.0 + math.sqrt(5.0)) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
             (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    pts = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]
    for _ in range(depth):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i: int, j: int) -> int:
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = pts[i] + pts[j]
                pts.append(m / np.linalg.norm(m))
                cache[key] = len(pts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    V = np.array(pts)
    F = np.array(faces, dtype=np.int64)
    V.setflags(write=False)
    F.setflags(write=False)
    return V, F


def great_circle_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Angle between unit vectors, accurate for nearby points."""
    return 2.0 * np.arcsin(np.clip(0.5 * np.linalg.norm(a - b, axis=-1), 0.0, 1.0))


# --- sampled maps ----------------------------------------------------------

@dataclasses.dataclass(frozen=True, eq=False)
class SphereMap:
    """A map ``S^2 -> S^2`` sampled at the vertices of an icosphere.

    ``images`` holds the node images; between nodes the map is the normalised
    linear interpolation on each triangle.  Maps constructed from an exact
    formula keep that formula as ``evaluator`` (and ``inverse_evaluator``
    when available), which :meth:`__call__` prefers over interpolation.
    """

    images: np.ndarray
    depth: int = DEFAULT_DEPTH
    source: str = ""
    evaluator: Callable[[np.ndarray], np.ndarray] | None = None
    inverse_evaluator: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        images = np.array(self.images, dtype=float)
        if images.shape != self.nodes.shape:
            raise ValueError(f"expected {self.nodes.shape[0]} node images, got shape {images.shape}")
        dev = float(np.max(np.abs(np.linalg.norm(images, axis=1) - 1.0)))
        if dev > 1e-12:
            raise ValueError(f"node images leave the unit sphere (max deviation {dev:.2e})")
        images.setflags(write=False)
        object.__setattr__(self, "images", images)

    @property
    def nodes(self) -> np.ndarray:
        return icosphere(self.depth)[0]

    @property
    def faces(self) -> np.ndarray:
        return icosphere(self.depth)[1]

    @property
    def triangulation_id(self) -> str:
        return f"icosphere-{self.depth}"

    @classmethod
    def from_function(cls, f: Callable[[np.ndarray], np.ndarray], depth: int = DEFAULT_DEPTH,
                      source: str = "", inverse: Callable[[np.ndarray], np.ndarray] | None = None) -> "SphereMap":
        images = f(icosphere(depth)[0])
        images = images / np.linalg.norm(images, axis=1, keepdims=True)
        return cls(images, depth, source, f, inverse)

    @classmethod
    def identity(cls, depth: int = DEFAULT_DEPTH) -> "SphereMap":
        f = lambda x: np.array(np.atleast_2d(x), dtype=float)
        return cls.from_function(f, depth, "identity", f)

    @classmethod
    def linear(cls, M: np.ndarray, depth: int = DEFAULT_DEPTH, source: str = "linear") -> "SphereMap":
        """``x -> Mx/|Mx|``; an isometry when ``M`` is orthogonal."""
        M = np.asarray(M, dtype=float)
        Minv = np.linalg.inv(M)

        def f(x):
            y = np.atleast_2d(x) @ M.T
            return y / np.linalg.norm(y, axis=1, keepdims=True)

        def finv(x):
            y = np.atleast_2d(x) @ Minv.T
            return y / np.linalg.norm(y, axis=1, keepdims=True)

        return cls.from_function(f, depth, source, finv)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        if self.evaluator is not None:
            return self.evaluator(np.atleast_2d(points))
        return self.interpolate(points)

    def inverse(self, points: np.ndarray) -> np.ndarray:
        if self.inverse_evaluator is None:
            raise ValueError(f"map '{self.source}' has no inverse evaluator")
        return self.inverse_evaluator(np.atleast_2d(points))

    def interpolate(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        face, bary = locate(self.depth, p)
        y = np.einsum("nk,nkc->nc", bary, self.images[self.faces[face]])
        return y / np.linalg.norm(y, axis=1, keepdims=True)

    def to_text(self) -> str:
        lines = [
            f"{FORMAT_HEADER} v{FORMAT_VERSION}",
            f"triangulation {self.triangulation_id}",
            f"source {self.source}",
            f"nodes {self.images.shape[0]}",
        ]
        lines += [f"{i} {x!r} {y!r} {z!r}" for i, (x, y, z) in enumerate(self.images.tolist())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SphereMap":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith(FORMAT_HEADER):
            raise ValueError("not a sphere-map file")
        version = int(lines[0].rsplit("v", 1)[1])
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported sphere-map version {version}")
        tri = lines[1].split(None, 1)[1]
        if not tri.startswith("icosphere-"):
            raise ValueError(f"unknown triangulation {tri!r}")
        depth = int(tri.split("-")[1])
        source = lines[2].split(None, 1)[1] if len(lines[2].split(None, 1)) > 1 else ""
        n = int(lines[3].split()[1])
        images = np.zeros((n, 3))
        for ln in lines[4:4 + n]:
            i, x, y, z = ln.split()
            images[int(i)] = (float(x), float(y), float(z))
        return cls(images, depth, source)


@functools.lru_cache(maxsize=None)
def _face_tree(depth: int) -> tuple[cKDTree, np.ndarray]:
    V, F = icosphere(depth)
    c = V[F].mean(axis=1)
    c /= np.linalg.norm(c, axis=1, keepdims=True)
    # inverse of the vertex matrix of each face: barycentric coordinates of the
    # ray through a point are proportional to Tinv @ p
    Tinv = np.linalg.inv(np.transpose(V[F], (0, 2, 1)))
    return cKDTree(c), Tinv


def locate(depth: int, points: np.ndarray, candidates: int = 6) -> tuple[np.ndarray, np.ndarray]:
    """Containing face and barycentric weights (summing to one) of each point."""
    tree, Tinv = _face_tree(depth)
    _, cand = tree.query(points, k=candidates)
    lam = np.einsum("nkij,nj->nki", Tinv[cand], points)
    lam /= lam.sum(axis=2, keepdims=True)
    score = lam.min(axis=2)
    best = np.argmax(score, axis=1)
    rows = np.arange(points.shape[0])
    return cand[rows, best], lam[rows, best]


# --- the exponential fan ----------------------------------------------------

class ExponentialFan:
    """``exp_{g,p}`` in geodesic polar coordinates about ``p``.

    ``F(r, alpha) = exp_{g,p}(r (cos alpha f_1 + sin alpha f_2))`` for the
    Gram-Schmidt frame ``f`` of ``g`` at ``p`` and ``0 <= r <= r_max``.
    """

    def __init__(self, g: ConformalMetricS2, p: np.ndarray = NORTH, n_radial: int = 40,
                 n_angular: int = 81, r_max: float = math.pi, rtol: float = 1e-13):
        if n_angular % 2 == 0:
            raise ValueError("n_angular must be odd")
        self.frame: TangentFrame = gram_schmidt_frame(g, p)
        self.p = self.frame.point
        self.r_max = r_max
        self.lam = float(np.exp(g.u(self.p))[0])
        s = -np.cos(np.pi * np.arange(n_radial) / (n_radial - 1))  # Lobatto nodes on [-1, 1]
        r = 0.5 * r_max * (s + 1.0)
        alpha = 2.0 * np.pi * np.arange(n_angular) / n_angular
        w = np.outer(np.cos(alpha), self.frame.vectors[0]) + np.outer(np.sin(alpha), self.frame.vectors[1])
        ig = GeodesicIntegrator(g, rtol=rtol, atol=rtol)
        states = ig.integrate(np.broadcast_to(self.p, w.shape), w, r)
        X = states[:, :, :3]
        X /= np.linalg.norm(X, axis=2, keepdims=True)
        X[0] = self.p
        self.samples = X  # (n_radial, n_angular, 3)
        self.radii, self.angles = r, alpha
        C = np.linalg.solve(chebyshev.chebvander(s, n_radial - 1), X.reshape(n_radial, -1))
        A = np.fft.rfft(C.reshape(n_radial, n_angular, 3), axis=1) / n_angular
        A[:, 1:] *= 2.0
        self._coef = A  # (n_radial, n_modes, 3) complex
        self._coef_dr = chebyshev.chebder(A.reshape(n_radial, -1)).reshape(n_radial - 1, *A.shape[1:]) * (2.0 / r_max)
        self._modes = np.arange(A.shape[1])
        self.cut_point = X[-1].mean(axis=0)
        self.cut_point /= np.linalg.norm(self.cut_point)
        self.cut_spread = float(np.max(np.linalg.norm(X[-1] - self.cut_point, axis=1)))
        self._tree = cKDTree(X[1:].reshape(-1, 3))
        self._tree_ra = np.stack(np.meshgrid(r[1:], alpha, indexing="ij"), axis=-1).reshape(-1, 2)

    def __call__(self, r: np.ndarray, alpha: np.ndarray, derivatives: bool = False):
        r = np.asarray(r, dtype=float)
        alpha = np.asarray(alpha, dtype=float)
        s = 2.0 * r / self.r_max - 1.0
        T = chebyshev.chebvander(s, self._coef.shape[0] - 1)
        E = np.exp(1j * np.outer(alpha, self._modes))
        F = _contract(T, self._coef, E)
        if not derivatives:
            return F
        Fa = _contract(T, self._coef, 1j * self._modes * E)
        Tr = chebyshev.chebvander(s, self._coef_dr.shape[0] - 1)
        Fr = _contract(Tr, self._coef_dr, E)
        return F, Fr, Fa

    def polar(self, q: np.ndarray, tol: float = 1e-13, max_iter: int = 40) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Polar coordinates of points ``q``; also returns the final residual ``|F - q|``."""
        q = np.atleast_2d(q)
        n = q.shape[0]
        r = np.zeros(n)
        a = np.zeros(n)
        # near p the exponential map is the identity to second order
        e1, e2 = self.frame.vectors
        d = q - self.p
        near = np.linalg.norm(d, axis=1) < 0.05
        # frame vectors have ambient length 1/lam, so ambient d = (r/lam) unit
        x1 = (d @ e1) * self.lam ** 2
        x2 = (d @ e2) * self.lam ** 2
        r[near] = np.hypot(x1, x2)[near]
        a[near] = np.arctan2(x2, x1)[near]
        _, idx = self._tree.query(q[~near])
        r[~near], a[~near] = self._tree_ra[idx].T
        resid = np.full(n, np.inf)
        active = np.ones(n, dtype=bool)
        tiny = np.linalg.norm(d, axis=1) < 1e-12
        active[tiny] = False
        resid[tiny] = np.linalg.norm(d[tiny], axis=1)
        for _ in range(max_iter):
            k = np.flatnonzero(active)
            if k.size == 0:
                break
            F, Fr, Fa = self(r[k], a[k], derivatives=True)
            res = F - q[k]
            resid[k] = np.linalg.norm(res, axis=1)
            done = resid[k] < tol
            active[k[done]] = False
            keep = ~done
            k, Fr, Fa, res = k[keep], Fr[keep], Fa[keep], res[keep]
            # Newton in the Cartesian chart z = rho (cos a, sin a) centred at p
            # (rho = r) or at the cut point (rho = r_max - r); polar
            # coordinates are singular at both ends, these charts are not
            at_p = r[k] < 0.5 * self.r_max
            rho = np.where(at_p, r[k], self.r_max - r[k])
            sign = np.where(at_p, 1.0, -1.0)
            small = rho < 1e-7
            if np.any(small):
                rs = np.clip(r[k[small]], 1e-7, self.r_max - 1e-7)
                _, Fr[small], Fa[small] = self(rs, a[k[small]], derivatives=True)
            rho_d = np.maximum(rho, 1e-7)[:, None]
            c, s_ = np.cos(a[k])[:, None], np.sin(a[k])[:, None]
            J1 = sign[:, None] * c * Fr - s_ / rho_d * Fa
            J2 = sign[:, None] * s_ * Fr + c / rho_d * Fa
            g11, g12, g22 = np.sum(J1 * J1, 1), np.sum(J1 * J2, 1), np.sum(J2 * J2, 1)
            b1, b2 = -np.sum(J1 * res, 1), -np.sum(J2 * res, 1)
            det = g11 * g22 - g12 ** 2
            ok = det > 1e-300
            safe = np.where(ok, det, 1.0)
            dz = np.stack([np.where(ok, (g22 * b1 - g12 * b2) / safe, 0.0),
                           np.where(ok, (g11 * b2 - g12 * b1) / safe, 0.0)], axis=1)
            size = np.linalg.norm(dz, axis=1, keepdims=True)
            dz *= np.minimum(1.0, 0.5 / np.maximum(size, 1e-300))
            z = rho[:, None] * np.hstack([c, s_]) + dz
            rho_new = np.linalg.norm(z, axis=1)
            a[k] = np.where(rho_new > 0.0, np.arctan2(z[:, 1], z[:, 0]), a[k])
            r[k] = np.clip(np.where(at_p, rho_new, self.r_max - rho_new), 0.0, self.r_max)
        k = np.flatnonzero(~tiny)
        resid[k] = np.linalg.norm(self(r[k], a[k]) - q[k], axis=1)
        return r, np.mod(a, 2.0 * np.pi), resid


def _contract(T: np.ndarray, coef: np.ndarray, E: np.ndarray) -> np.ndarray:
    """``Re sum_{k,m} T[n,k] coef[k,m,:] E[n,m]`` using a BLAS product for the k-sum."""
    K, M, _ = coef.shape
    D = (T.astype(complex) @ coef.reshape(K, -1)).reshape(-1, M, 3)
    return np.real(np.matmul(E[:, None, :], D)[:, 0, :])


def _orthonormal_polar(p: np.ndarray, frame: np.ndarray, r: np.ndarray, a: np.ndarray) -> np.ndarray:
    return (np.cos(r)[:, None] * p
            + np.sin(r)[:, None] * (np.cos(a)[:, None] * frame[0] + np.sin(a)[:, None] * frame[1]))


class CartanIsometry:
    """Exact evaluator of ``phi_g`` and its inverse for a round metric ``g``."""

    def __init__(self, g: ConformalMetricS2, p: np.ndarray = NORTH, **fan_options):
        self.g = g
        self.fan = ExponentialFan(g, p, **fan_options)
        self.p = self.fan.p
        self.target_frame = standard_frame(self.p).vectors

    def __call__(self, q: np.ndarray) -> np.ndarray:
        q = np.atleast_2d(np.asarray(q, dtype=float))
        r, a, resid = self.fan.polar(q)
        out = _orthonormal_polar(self.p, self.target_frame, r, a)
        # the cut point of p is where every direction ends; its image is -p
        at_cut = np.linalg.norm(q - self.fan.cut_point, axis=1) < max(CUT_RADIUS, 10 * self.fan.cut_spread)
        out[at_cut] = -self.p
        bad = (resid > 1e-9) & ~at_cut
        if np.any(bad):
            raise RuntimeError(
                f"inverting the exponential fan failed at {int(bad.sum())} point(s) (max residual {resid[bad].max():.2e})"
            )
        return out

    def inverse(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        e1, e2 = self.target_frame
        s1, s2 = x @ e1, x @ e2
        # arctan2 keeps full relative accuracy near p, where arccos loses half the digits
        r = np.arctan2(np.hypot(s1, s2), x @ self.p)
        a = np.arctan2(s2, s1)
        out = self.fan(r, a)
        return out / np.linalg.norm(out, axis=1, keepdims=True)


def cartan_isometry(g: ConformalMetricS2, p: np.ndarray = NORTH, depth: int = DEFAULT_DEPTH,
                    round_tol: float = ROUND_TOL, source: str = "", **fan_options) -> SphereMap:
    """The isometry ``(S^2, g) -> (S^2, g0)`` fixing ``p`` with Gram-Schmidt frame data."""
    K = gauss_curvature(g)
    dev = float(np.max(np.abs(K - 1.0)))
    if dev > round_tol:
        raise ValueError(f"metric is not round: max |K - 1| = {dev:.3e} exceeds {round_tol:.1e}")
    phi = CartanIsometry(g, p, **fan_options)
    return SphereMap.from_function(phi, depth, source or "cartan", phi.inverse)


# --- checks --------------------------------------------------------------------

def _sample_points(phi: SphereMap, points: np.ndarray | None) -> np.ndarray:
    return phi.nodes if points is None else np.atleast_2d(points)


def check_isometry(phi: SphereMap, g: ConformalMetricS2, h: ConformalMetricS2,
                   points: np.ndarray | None = None, step: float = 1e-4) -> float:
    """Sup of ``|h(Dphi v, Dphi w) - g(v, w)|`` over round-orthonormal pairs at sample points.

    ``Dphi`` is a centred difference along great circles with the given step.
    """
    p = _sample_points(phi, points)
    frames = np.stack([standard_frame(q).vectors for q in p])
    lam_g = np.exp(2.0 * g.u(p))
    images = phi(p)
    lam_h = np.exp(2.0 * h.u(images))
    D = []
    for i in range(2):
        t = frames[:, i]
        fwd = phi(math.cos(step) * p + math.sin(step) * t)
        bwd = phi(math.cos(step) * p - math.sin(step) * t)
        D.append((fwd - bwd) / (2.0 * step))
    res = 0.0
    for i, j in ((0, 0), (0, 1), (1, 1)):
        hv = lam_h * np.sum(D[i] * D[j], axis=1)
        gv = lam_g * (1.0 if i == j else 0.0)
        res = max(res, float(np.max(np.abs(hv - gv))))
    return res


def check_equivariance(phi: SphereMap, points: np.ndarray | None = None) -> float:
    """Max great-circle distance between ``phi(-p)`` and ``-phi(p)``."""
    p = _sample_points(phi, points)
    return float(np.max(great_circle_distance(phi(-p), -phi(p))))


def frame_defect(phi: SphereMap, g: ConformalMetricS2, p: np.ndarray = NORTH, step: float = 1e-4) -> float:
    """How far ``Dphi_p`` is from sending the Gram-Schmidt frame to the standard frame."""
    f = gram_schmidt_frame(g, p)
    e = standard_frame(p).vectors
    lam = math.exp(float(g.u(f.point)[0]))
    err = 0.0
    for i in range(2):
        t = f.vectors[i] * lam  # round-unit direction
        h = step
        fwd = phi(math.cos(h) * f.point + math.sin(h) * t)
        bwd = phi(math.cos(h) * f.point - math.sin(h) * t)
        d = (fwd - bwd)[0] / (2.0 * h) / lam
        err = max(err, float(np.max(np.abs(d - e[i]))))
    return err


def canonical_rp2(points: np.ndarray) -> np.ndarray:
    """Representative of each antipodal pair: z >= 0, ties broken by x then y."""
    p = np.array(np.atleast_2d(points), dtype=float)
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    flip = (z < 0) | ((z == 0) & ((x < 0) | ((x == 0) & (y < 0))))
    p[flip] *= -1.0
    return p


def projective_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance in RP^2 between the classes of ``a`` and ``b``."""
    return np.minimum(great_circle_distance(a, b), great_circle_distance(a, -b))


@dataclasses.dataclass(frozen=True, eq=False)
class QuotientMap:
    """Map of RP^2 induced by an antipodally equivariant sphere map."""

    lift: SphereMap

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return canonical_rp2(self.lift(canonical_rp2(points)))

    def well_definedness(self, points: np.ndarray | None = None) -> float:
        """Projective distance between the images of both representatives."""
        p = _sample_points(self.lift, points)
        return float(np.max(projective_distance(self.lift(p), self.lift(-p))))


def descend_to_rp2(phi: SphereMap, tol: float = 1e-6) -> QuotientMap:
    dev = check_equivariance(phi)
    if dev >= tol:
        raise ValueError(f"map is not antipodally equivariant (deviation {dev:.3e} >= {tol:.1e})")
    return QuotientMap(phi)
