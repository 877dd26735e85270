"""Normalized Ricci flow on the two finite-dimensional metric slices.

On a surface ``Ric = K g`` and the average scalar curvature is ``8 pi / A``,
so for ``g = exp(2u) g0`` the normalized flow ``dg/dt = -2 Ric + (2/n) avg(Scal) g``
becomes ``du/dt = Kbar - K`` with ``Kbar = 4 pi / A``.

For a left-invariant metric on S^3 the scalar curvature is constant, so its
average is itself and ``dlam_i/dt = -2 lam_i Ric(e_i) + (2/3) Scal lam_i``.
"""

from __future__ import annotations

import csv
import dataclasses
import functools
import io
import logging
import math

import numpy as np

from .geometry import ConformalMetricS2, gauss_curvature, pinching_report_s2
from .harmonics import HarmonicField, SphereGrid
from .milnor import (
    MilnorMetricS3,
    plane_curvatures,
    ricci_eigenvalues,
    sectional_extremes_milnor,
    total_volume,
)

log = logging.getLogger(__name__)

STEPPERS = ("IMEX-Euler", "IMEX-RK2", "RK4-ODE")


class PinchingError(ValueError):
    """Input metric is not strictly quarter pinched."""


class FlowNotConverged(RuntimeError):
    def __init__(self, message: str, trace: "FlowTrace", metric):
        super().__init__(message)
        self.trace = trace
        self.metric = metric


@dataclasses.dataclass(frozen=True)
class FlowConfig:
    dt_max: float = 0.02
    convergence_tol: float = 1e-8
    max_time: float = 40.0
    stepper: str = "IMEX-RK2"
    dwell: int = 10
    # local error target for the adaptive RK4 stepper on S^3
    ode_tol: float = 1e-13

    def __post_init__(self):
        if not self.dt_max > 0 or not self.convergence_tol > 0:
            raise ValueError("dt_max and convergence_tol must be positive")
        if self.stepper not in STEPPERS:
            raise ValueError(f"unknown stepper {self.stepper!r}; choose from {STEPPERS}")


@dataclasses.dataclass
class FlowTrace:
    times: list = dataclasses.field(default_factory=list)
    volume: list = dataclasses.field(default_factory=list)
    K_min: list = dataclasses.field(default_factory=list)
    K_max: list = dataclasses.field(default_factory=list)
    ratio: list = dataclasses.field(default_factory=list)
    residual: list = dataclasses.field(default_factory=list)
    # diagnostics beyond the exported columns
    gauss_bonnet: list = dataclasses.field(default_factory=list)
    symmetry_defect: list = dataclasses.field(default_factory=list)
    pinching_lost: list = dataclasses.field(default_factory=list)
    converged: bool = False
    steps: int = 0

    def record(self, t, volume, K_min, K_max, residual, gauss_bonnet=0.0, symmetry_defect=0.0):
        if self.times and not t > self.times[-1]:
            raise ValueError("trace times must be strictly increasing")
        self.times.append(float(t))
        self.volume.append(float(volume))
        self.K_min.append(float(K_min))
        self.K_max.append(float(K_max))
        self.ratio.append(float(K_max / K_min) if K_min > 0 else math.inf)
        self.residual.append(float(residual))
        self.gauss_bonnet.append(float(gauss_bonnet))
        self.symmetry_defect.append(float(symmetry_defect))
        if K_min <= 0:
            self.pinching_lost.append(float(t))

    def __len__(self) -> int:
        return len(self.times)

    def max_volume_drift_rate(self) -> float:
        """Largest relative volume drift per unit flow time."""
        v = np.asarray(self.volume)
        t = np.asarray(self.times)
        if len(v) < 2:
            return 0.0
        return float(np.max(np.abs(v[1:] - v[0]) / v[0] / np.maximum(t[1:] - t[0], 1.0)))

    def decay_rate(self, lo: float = 1e-10, hi: float | None = None) -> float:
        """Exponential decay rate of the residual by least squares on log scale."""
        r = np.asarray(self.residual)
        t = np.asarray(self.times)
        mask = r > lo
        if hi is not None:
            mask &= r < hi
        slope = np.polyfit(t[mask], np.log(r[mask]), 1)[0]
        return float(-slope)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "area_or_volume", "K_min", "K_max", "ratio", "residual"])
        for row in zip(self.times, self.volume, self.K_min, self.K_max, self.ratio, self.residual):
            w.writerow([repr(float(x)) for x in row])
        return buf.getvalue()


# --- right-hand sides ------------------------------------------------------------

@dataclasses.dataclass
class _S2State:
    """Nodal quantities of one evaluation, shared by rhs and diagnostics."""

    u_nodal: np.ndarray
    K: np.ndarray
    area: float

    @property
    def Kbar(self) -> float:
        return 4.0 * math.pi / self.area


def _s2_state(grid: SphereGrid, u: np.ndarray) -> _S2State:
    ls_lap = grid.laplacian_eigenvalues
    un = grid.Y @ u
    lap = grid.Y @ (ls_lap * u)
    e2u = np.exp(2.0 * un)
    K = (1.0 - lap) / e2u
    return _S2State(un, K, grid.integrate(e2u))


def _rhs_coeffs(grid: SphereGrid, st: _S2State) -> np.ndarray:
    return grid.weighted_Y.T @ (st.Kbar - st.K)


def flow_rhs_s2(m: ConformalMetricS2) -> HarmonicField:
    grid = m.grid()
    return HarmonicField(_rhs_coeffs(grid, _s2_state(grid, m.u.coeffs)))


def flow_rhs_milnor(m: MilnorMetricS3) -> np.ndarray:
    return _milnor_rhs(m.lambdas)


def _milnor_rhs(lam: np.ndarray) -> np.ndarray:
    ric = ricci_eigenvalues(MilnorMetricS3.from_array(lam))
    scal = ric.sum()
    return lam * (-2.0 * ric + (2.0 / 3.0) * scal)


# --- S^2 integrators -------------------------------------------------------------

_ARS_GAMMA = 1.0 - 1.0 / math.sqrt(2.0)
_ARS_DELTA = 1.0 - 1.0 / (2.0 * _ARS_GAMMA)


def _imex_step(grid: SphereGrid, u: np.ndarray, st: _S2State, dt: float, scheme: str) -> np.ndarray:
    """One IMEX step with ``c * lap u`` implicit.

    ``c`` is the largest value of ``exp(-2u)`` at the start of the step, which
    keeps the explicit remainder ``(exp(-2u) - c) lap u`` anti-diffusive at most
    by half the implicit part (unconditional linear stability).
    """
    lam = grid.laplacian_eigenvalues
    c = float(np.max(np.exp(-2.0 * st.u_nodal)))
    implicit = c * lam

    def explicit(v, state):
        return _rhs_coeffs(grid, state) - implicit * v

    E0 = explicit(u, st)
    if scheme == "IMEX-Euler":
        return (u + dt * E0) / (1.0 - dt * implicit)
    # ARS(2,2,2): L-stable implicit part, second order overall
    g = _ARS_GAMMA
    denom = 1.0 - dt * g * implicit
    U1 = (u + dt * g * E0) / denom
    I1 = implicit * U1
    E1 = explicit(U1, _s2_state(grid, U1))
    return (u + dt * ((1.0 - g) * I1 + _ARS_DELTA * E0 + (1.0 - _ARS_DELTA) * E1)) / denom


def _rk4_step_s2(grid: SphereGrid, u: np.ndarray, st: _S2State, dt: float) -> np.ndarray:
    def f(v, state=None):
        return _rhs_coeffs(grid, state or _s2_state(grid, v))

    k1 = f(u, st)
    k2 = f(u + 0.5 * dt * k1)
    k3 = f(u + 0.5 * dt * k2)
    k4 = f(u + dt * k3)
    return u + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _symmetry_defect_s2(u: np.ndarray, L: int) -> float:
    return HarmonicField(u).odd_mass()


def _run_s2(m: ConformalMetricS2, cfg: FlowConfig):
    grid = m.grid()
    L = m.L
    u = m.u.coeffs.copy()
    area0 = None
    trace = FlowTrace()
    t = 0.0
    dt = cfg.dt_max
    if cfg.stepper == "RK4-ODE":
        # explicit stepping is limited by the stiffest Laplacian mode
        dt = min(dt, 2.5 / (L * (L + 1) * 1.2))
    sqrt4pi = math.sqrt(4.0 * math.pi)
    calm = 0
    while True:
        st = _s2_state(grid, u)
        if area0 is None:
            area0 = st.area
        residual = float(np.max(np.abs(st.K - st.Kbar)))
        gb = abs(grid.integrate(st.K * np.exp(2.0 * st.u_nodal)) - 4.0 * math.pi) / (4.0 * math.pi)
        trace.record(t, st.area, st.K.min(), st.K.max(), residual, gb,
                     _symmetry_defect_s2(u, L))
        if trace.steps == 0 and residual < cfg.convergence_tol:
            trace.converged = True
            return m, trace
        calm = calm + 1 if residual < cfg.convergence_tol else 0
        if calm >= cfg.dwell:
            trace.converged = True
            return m.with_u(HarmonicField(u)), trace
        if t >= cfg.max_time - 1e-12:
            raise FlowNotConverged(
                f"no convergence by t={t:.3f}: residual {residual:.3e} > {cfg.convergence_tol:.1e}",
                trace, m.with_u(HarmonicField(u)))
        h = min(dt, cfg.max_time - t)
        if cfg.stepper == "RK4-ODE":
            u = _rk4_step_s2(grid, u, st, h)
        else:
            u = _imex_step(grid, u, st, h, cfg.stepper)
        # the continuous flow preserves area exactly; remove the O(dt^p)
        # drift of the time discretisation with a constant shift of u
        area = grid.integrate(np.exp(2.0 * (grid.Y @ u)))
        u[0] += sqrt4pi * 0.5 * math.log(area0 / area)
        t += h
        trace.steps += 1


# --- S^3 integrator --------------------------------------------------------------

def _rk4(lam: np.ndarray, dt: float) -> np.ndarray:
    k1 = _milnor_rhs(lam)
    k2 = _milnor_rhs(lam + 0.5 * dt * k1)
    k3 = _milnor_rhs(lam + 0.5 * dt * k2)
    k4 = _milnor_rhs(lam + dt * k3)
    return lam + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _milnor_residual(lam: np.ndarray) -> tuple[float, float, float]:
    kappa = plane_curvatures(MilnorMetricS3.from_array(lam))
    return float(np.max(np.abs(kappa - kappa.mean()))), float(kappa.min()), float(kappa.max())


def _run_s3(m: MilnorMetricS3, cfg: FlowConfig):
    lam = m.lambdas
    trace = FlowTrace()
    t = 0.0
    dt = cfg.dt_max
    calm = 0
    while True:
        residual, kmin, kmax = _milnor_residual(lam)
        trace.record(t, total_volume(MilnorMetricS3.from_array(lam)), kmin, kmax, residual,
                     symmetry_defect=abs(lam[0] - lam[1]))
        if trace.steps == 0 and residual < cfg.convergence_tol:
            trace.converged = True
            return m, trace
        calm = calm + 1 if residual < cfg.convergence_tol else 0
        if calm >= cfg.dwell:
            trace.converged = True
            return MilnorMetricS3.from_array(lam), trace
        if t >= cfg.max_time - 1e-12:
            raise FlowNotConverged(
                f"no convergence by t={t:.3f}: residual {residual:.3e} > {cfg.convergence_tol:.1e}",
                trace, MilnorMetricS3.from_array(lam))
        # step doubling: accept when the two estimates agree to ode_tol
        while True:
            h = min(dt, cfg.max_time - t)
            full = _rk4(lam, h)
            half = _rk4(_rk4(lam, 0.5 * h), 0.5 * h)
            err = float(np.max(np.abs(full - half) / lam)) / 15.0
            if err <= cfg.ode_tol or h < 1e-10:
                break
            dt = 0.5 * h
        lam = half + (half - full) / 15.0
        t += h
        trace.steps += 1
        if err < 0.1 * cfg.ode_tol:
            dt = min(cfg.dt_max, 1.5 * dt)


# --- public operations -----------------------------------------------------------

@functools.singledispatch
def pinching_report(m):
    raise TypeError(f"unsupported metric type {type(m).__name__}")


pinching_report.register(ConformalMetricS2, pinching_report_s2)
pinching_report.register(MilnorMetricS3, lambda m: sectional_extremes_milnor(m))


@functools.singledispatch
def run_flow_to_round(m, cfg: FlowConfig | None = None):
    """Flow ``m`` until its curvature is constant; returns ``(metric, trace)``.

    The input must be strictly quarter pinched.  Raises ``FlowNotConverged``
    (carrying the trace) if ``cfg.max_time`` is reached first.
    """
    raise TypeError(f"unsupported metric type {type(m).__name__}")


def _check_pinched(m):
    report = pinching_report(m)
    if not report.pinched:
        raise PinchingError(
            f"initial metric is not strictly quarter pinched: K in [{report.K_min:.4g}, {report.K_max:.4g}], "
            f"verdict {report.verdict.value}")


@run_flow_to_round.register
def _(m: ConformalMetricS2, cfg: FlowConfig | None = None):
    _check_pinched(m)
    return _run_s2(m, cfg or FlowConfig())


@run_flow_to_round.register
def _(m: MilnorMetricS3, cfg: FlowConfig | None = None):
    _check_pinched(m)
    cfg = cfg or FlowConfig(stepper="RK4-ODE", dt_max=0.05)
    return _run_s3(m, cfg)


@functools.singledispatch
def normalize_to_curvature_one(m, tol: float = 1e-6):
    """Rescale a constant-curvature metric so that its curvature is exactly one."""
    raise TypeError(f"unsupported metric type {type(m).__name__}")


@normalize_to_curvature_one.register
def _(m: ConformalMetricS2, tol: float = 1e-6):
    K = gauss_curvature(m)
    K_star = float(np.mean(K))
    spread = float(np.max(np.abs(K - K_star)))
    if not K_star > 0 or spread > tol * K_star:
        raise ValueError(f"metric does not have constant positive curvature (mean {K_star:.6g}, spread {spread:.3e})")
    return m.with_u(m.u + HarmonicField.constant(0.5 * math.log(K_star), m.L))


@normalize_to_curvature_one.register
def _(m: MilnorMetricS3, tol: float = 1e-6):
    kappa = plane_curvatures(m)
    K_star = float(kappa.mean())
    spread = float(np.max(np.abs(kappa - K_star)))
    if not K_star > 0 or spread > tol * K_star:
        raise ValueError(f"metric does not have constant positive curvature (curvatures {kappa})")
    return MilnorMetricS3.from_array(m.lambdas * K_star)
