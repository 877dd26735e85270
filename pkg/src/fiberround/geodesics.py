"""Frames, exponential and logarithm maps of conformal metrics on S^2.

Curves are integrated in ambient coordinates.  For ``g = exp(2u) g0`` the
Levi-Civita connection is ``D_v w = D0_v w + du(v) w + du(w) v - g0(v, w) grad u``
and ``D0`` on the unit sphere is the tangential part of the ambient
derivative, so a geodesic satisfies

    x'' = -|x'|^2 x - 2 (grad u . x') x' + |x'|^2 grad u

with ``grad`` the round tangential gradient and ``|.|`` the ambient norm.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
from scipy.integrate import solve_ivp

from .geometry import ConformalMetricS2

NORTH = np.array([0.0, 0.0, 1.0])
DELTA_CUT = 0.05
EXP_MARGIN = 0.25
ODE_TOL = 1e-12


class CutLocusProximity(ValueError):
    def __init__(self, message: str, distance: np.ndarray):
        super().__init__(message)
        self.distance = distance


class ShootingError(RuntimeError):
    def __init__(self, message: str, residual: np.ndarray):
        super().__init__(message)
        self.residual = residual


@dataclasses.dataclass(frozen=True, eq=False)
class TangentFrame:
    point: np.ndarray
    vectors: np.ndarray  # (2, 3), ambient coordinates

    def __post_init__(self):
        p = np.asarray(self.point, dtype=float)
        V = np.asarray(self.vectors, dtype=float)
        if V.shape != (2, 3):
            raise ValueError("a tangent frame has two ambient 3-vectors")
        if np.max(np.abs(V @ p)) >= 1e-12:
            raise ValueError("frame vectors are not tangent at the base point")
        if np.linalg.norm(np.cross(V[0], V[1])) < 1e-12:
            raise ValueError("frame vectors are linearly dependent")
        object.__setattr__(self, "point", p)
        object.__setattr__(self, "vectors", V)

    def combine(self, coords: np.ndarray) -> np.ndarray:
        """Tangent vectors with the given frame coordinates, shape (n, 3)."""
        return np.atleast_2d(coords) @ self.vectors


def standard_frame(p: np.ndarray) -> TangentFrame:
    """The round orthonormal frame at ``p``; at the north pole it is (e_x, e_y)."""
    p = np.asarray(p, dtype=float)
    p = p / np.linalg.norm(p)
    t = np.array([1.0, 0.0, 0.0]) - p[0] * p
    if np.linalg.norm(t) < 0.5:
        t = np.array([0.0, 1.0, 0.0]) - p[1] * p
    t1 = t / np.linalg.norm(t)
    t2 = np.cross(p, t1)
    return TangentFrame(p, np.stack([t1, t2]))


def gram_schmidt_frame(g: ConformalMetricS2, p: np.ndarray = NORTH) -> TangentFrame:
    """g-orthonormalisation of the standard frame at ``p``."""
    e = standard_frame(p)
    lam = float(g.conformal_factor(e.point)[0])
    if not (np.isfinite(lam) and lam > 0.0):
        raise ValueError(f"degenerate metric at {e.point}: conformal factor {lam}")
    inner = lambda a, b: lam * float(a @ b)
    f1 = e.vectors[0] / math.sqrt(inner(e.vectors[0], e.vectors[0]))
    w = e.vectors[1] - inner(e.vectors[1], f1) * f1
    f2 = w / math.sqrt(inner(w, w))
    return TangentFrame(e.point, np.stack([f1, f2]))


def _tangent_basis(p: np.ndarray) -> np.ndarray:
    """Round orthonormal tangent bases at many points, shape (n, 2, 3)."""
    return np.stack([standard_frame(q).vectors for q in p])


class GeodesicIntegrator:
    """Batched geodesic integration for one metric (DOP853 on the stacked state)."""

    def __init__(self, g: ConformalMetricS2, rtol: float = ODE_TOL, atol: float = ODE_TOL):
        self.g = g
        self.rtol = rtol
        self.atol = atol
        self._ev = g.u.evaluator

    def rhs(self, y: np.ndarray) -> np.ndarray:
        n = y.size // 6
        s = y.reshape(n, 6)
        x, v = s[:, :3], s[:, 3:]
        xs = x / np.linalg.norm(x, axis=1, keepdims=True)
        _, grad = self._ev(xs)
        v2 = np.sum(v * v, axis=1, keepdims=True)
        gv = np.sum(grad * v, axis=1, keepdims=True)
        acc = -v2 * x - 2.0 * gv * v + v2 * grad
        return np.concatenate([v, acc], axis=1).ravel()

    def integrate(self, x0: np.ndarray, v0: np.ndarray, times: np.ndarray) -> np.ndarray:
        """States ``(x, x')`` at ``times`` (increasing, starting after 0), shape (len(times), n, 6)."""
        x0 = np.atleast_2d(x0)
        v0 = np.atleast_2d(v0)
        times = np.asarray(times, dtype=float)
        y0 = np.concatenate([x0, v0], axis=1).ravel()
        n = x0.shape[0]
        if times[-1] == 0.0:
            return np.broadcast_to(y0.reshape(n, 6), (times.size, n, 6)).copy()
        sol = solve_ivp(
            lambda t, y: self.rhs(y), (0.0, float(times[-1])), y0,
            method="DOP853", t_eval=times, rtol=self.rtol, atol=self.atol,
        )
        if not sol.success:
            raise RuntimeError(f"geodesic integration failed: {sol.message}")
        return sol.y.T.reshape(times.size, n, 6)

    def exp(self, p: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Endpoints at time 1 of the geodesics with initial data (p, v)."""
        out = self.integrate(p, v, np.array([1.0]))[0, :, :3]
        return out / np.linalg.norm(out, axis=1, keepdims=True)


def _as_batch(p: np.ndarray, n: int) -> np.ndarray:
    p = np.atleast_2d(np.asarray(p, dtype=float))
    return np.broadcast_to(p, (n, 3)).copy() if p.shape[0] == 1 else p


def g_norm(g: ConformalMetricS2, p: np.ndarray, v: np.ndarray) -> np.ndarray:
    p = np.atleast_2d(p)
    return np.exp(g.u(p)) * np.linalg.norm(np.atleast_2d(v), axis=1)


def exp_map(g: ConformalMetricS2, p, v, max_length: float = math.pi + EXP_MARGIN,
            rtol: float = ODE_TOL) -> np.ndarray:
    """``exp_{g,p}(v)`` for one or many tangent vectors (ambient coordinates)."""
    v = np.atleast_2d(np.asarray(v, dtype=float))
    p = _as_batch(p, v.shape[0])
    if np.max(np.abs(np.sum(p * v, axis=1))) > 1e-10:
        raise ValueError("initial velocity is not tangent at the base point")
    lengths = g_norm(g, p, v)
    if np.any(lengths > max_length):
        raise ValueError(f"|v|_g = {lengths.max():.6f} exceeds the admissible length {max_length:.6f}")
    return GeodesicIntegrator(g, rtol=rtol).exp(p, v)


def round_log(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Logarithm of the round metric (the initial guess for shooting)."""
    c = np.clip(np.sum(p * q, axis=1), -1.0, 1.0)
    w = q - c[:, None] * p
    s = np.linalg.norm(w, axis=1)
    theta = np.arctan2(s, c)
    out = np.zeros_like(p)
    ok = s > 0.0
    out[ok] = (theta[ok] / s[ok])[:, None] * w[ok]
    return out


def _shoot(ig: GeodesicIntegrator, p, q, coords, basis, active, tol, max_iter, h=1e-7, max_step=0.5):
    """Newton iteration on frame coordinates of the initial velocity."""
    n = p.shape[0]
    resid = np.full(n, np.inf)
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        B = basis[idx]
        c = coords[idx]
        # base shot plus two forward-difference shots in one batch
        cs = np.concatenate([c, c + [h, 0.0], c + [0.0, h]])
        vs = np.einsum("ka,kac->kc", cs, np.concatenate([B, B, B]))
        ends = ig.exp(np.concatenate([p[idx]] * 3), vs)
        m = idx.size
        f0 = ends[:m] - q[idx]
        J = np.stack([(ends[m:2 * m] - ends[:m]) / h, (ends[2 * m:] - ends[:m]) / h], axis=2)
        r = np.linalg.norm(f0, axis=1)
        resid[idx] = r
        done = r < tol
        active[idx[done]] = False
        todo = ~done
        if not np.any(todo):
            break
        step = np.stack([np.linalg.lstsq(J[k], -f0[k], rcond=None)[0] for k in np.flatnonzero(todo)])
        # damp long steps: far from the solution the linear model is poor and
        # an undamped step can jump to a non-minimising geodesic
        size = np.linalg.norm(step, axis=1, keepdims=True)
        step *= np.minimum(1.0, max_step / np.maximum(size, 1e-300))
        coords[idx[todo]] = c[todo] + step
    else:
        idx = np.flatnonzero(active)
        if idx.size:
            B = basis[idx]
            ends = ig.exp(p[idx], np.einsum("ka,kac->kc", coords[idx], B))
            resid[idx] = np.linalg.norm(ends - q[idx], axis=1)
            active[idx[resid[idx] < tol]] = False
    return coords, resid


def log_map(g: ConformalMetricS2, p, q, delta_cut: float = DELTA_CUT, tol: float = 1e-10,
            max_iter: int = 50, rtol: float = ODE_TOL) -> np.ndarray:
    """``v`` with ``exp_{g,p}(v) = q`` by Newton shooting from the round logarithm.

    Points whose shooting fails are retried by continuation along the great
    circle from ``p`` to ``q`` with step halving.  Solutions with
    ``|v|_g >= pi - delta_cut`` are refused as too close to the cut locus.
    """
    q = np.atleast_2d(np.asarray(q, dtype=float))
    p = _as_batch(p, q.shape[0])
    ig = GeodesicIntegrator(g, rtol=rtol)
    basis = _tangent_basis(p)
    v0 = round_log(p, q)
    coords = np.einsum("kc,kac->ka", v0, basis)
    active = np.ones(q.shape[0], dtype=bool)
    coords, resid = _shoot(ig, p, q, coords, basis, active, tol, max_iter)
    # a converged shot longer than the admissible length may sit on a
    # non-minimising branch; retry those by continuation as well
    long = g_norm(g, p, np.einsum("ka,kac->kc", coords, basis)) >= math.pi - delta_cut
    for k in np.flatnonzero(active | long):
        coords[k], resid[k] = _continuation(ig, p[k], q[k], basis[k], tol, max_iter)
    v = np.einsum("ka,kac->kc", coords, basis)
    lengths = g_norm(g, p, v)
    near = lengths >= math.pi - delta_cut
    if np.any(near):
        raise CutLocusProximity(
            f"{int(near.sum())} target(s) within {delta_cut} of the cut locus (max |v|_g = {lengths.max():.6f})",
            lengths,
        )
    bad = resid >= tol
    if np.any(bad):
        raise ShootingError(f"shooting did not converge for {int(bad.sum())} target(s)", resid)
    return v


def _continuation(ig, p, q, basis, tol, max_iter, min_step=1.0 / 1024):
    theta = math.acos(float(np.clip(p @ q, -1.0, 1.0)))
    axis_dir = round_log(p[None], q[None])[0]
    nrm = np.linalg.norm(axis_dir)
    if nrm == 0.0 or theta == 0.0:
        return np.zeros(2), 0.0
    d = axis_dir / nrm
    coords = np.zeros(2)
    s, ds = 0.0, 0.25
    resid = np.inf
    while s < 1.0:
        ds = min(ds, 1.0 - s)
        t = (s + ds) * theta
        target = (math.cos(t) * p + math.sin(t) * d)[None]
        trial = coords.copy()[None]
        active = np.ones(1, dtype=bool)
        trial, r = _shoot(ig, p[None], target, trial, basis[None], active, tol, max_iter)
        if not active[0]:
            coords, resid, s = trial[0], float(r[0]), s + ds
            ds *= 2.0
        else:
            ds *= 0.5
            if ds < min_step:
                return coords, float(r[0])
    return coords, resid
