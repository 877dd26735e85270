"""Conformal metrics on S^2 and pinching verdicts."""

from __future__ import annotations

import dataclasses
import enum
import math

import numpy as np

from .harmonics import DEFAULT_L, HarmonicField, SphereGrid, sphere_grid

INDETERMINATE_BAND = 1e-9


class Verdict(str, enum.Enum):
    PINCHED = "StrictlyQuarterPinched"
    NOT_PINCHED = "NotPinched"
    INDETERMINATE = "Indeterminate"


@dataclasses.dataclass(frozen=True)
class PinchingReport:
    K_min: float
    K_max: float
    ratio: float
    verdict: Verdict
    sampling_planes: int

    @property
    def pinched(self) -> bool:
        return self.verdict is Verdict.PINCHED


def verdict_from_extremes(K_min: float, K_max: float, eps: float = INDETERMINATE_BAND) -> tuple[float, Verdict]:
    """Strict quarter-pinching from extremal sectional curvatures at a point."""
    if K_min <= 0.0:
        return math.inf, Verdict.NOT_PINCHED
    ratio = K_max / K_min
    if abs(ratio - 4.0) <= eps:
        return ratio, Verdict.INDETERMINATE
    return ratio, Verdict.PINCHED if ratio < 4.0 else Verdict.NOT_PINCHED


@dataclasses.dataclass(frozen=True, eq=False)
class ConformalMetricS2:
    """The metric ``exp(2u) * round`` on the unit sphere.

    ``antipodal_even`` marks metrics invariant under ``x -> -x``, i.e. lifts
    of metrics on RP^2; such ``u`` must have no odd-degree content.
    """

    u: HarmonicField
    antipodal_even: bool = False

    def __post_init__(self):
        if not np.all(np.isfinite(self.u.coeffs)):
            raise ValueError("log-conformal factor has non-finite coefficients")
        if self.antipodal_even and self.u.odd_mass() >= 1e-12:
            raise ValueError(f"metric flagged antipodally even but odd-degree mass is {self.u.odd_mass():.3e}")

    @property
    def L(self) -> int:
        return self.u.L

    @classmethod
    def round(cls, L: int = DEFAULT_L, even: bool = True) -> "ConformalMetricS2":
        return cls(HarmonicField.zeros(L), antipodal_even=even)

    def grid(self) -> SphereGrid:
        return sphere_grid(self.L)

    def with_u(self, u: HarmonicField) -> "ConformalMetricS2":
        return ConformalMetricS2(u, self.antipodal_even)

    def conformal_factor(self, points: np.ndarray) -> np.ndarray:
        return np.exp(2.0 * self.u(points))

    def inner(self, points: np.ndarray, v: np.ndarray, w: np.ndarray) -> np.ndarray:
        """g(v, w) for ambient tangent vectors at ``points``."""
        return self.conformal_factor(points) * np.sum(np.atleast_2d(v) * np.atleast_2d(w), axis=-1)


def gauss_curvature(m: ConformalMetricS2, grid: SphereGrid | None = None) -> np.ndarray:
    """Gauss curvature at the grid nodes.

    For ``g = exp(2u) g0`` with ``K0 = 1`` the conformal change formula gives
    ``K = exp(-2u) (1 - lap0 u)``; the round Laplacian acts diagonally on the
    coefficients (eigenvalue ``-l(l+1)``).
    """
    grid = grid or m.grid()
    u = grid.synthesis(m.u)
    lap = grid.synthesis(m.u.laplacian())
    return np.exp(-2.0 * u) * (1.0 - lap)


def total_area(m: ConformalMetricS2, grid: SphereGrid | None = None) -> float:
    grid = grid or m.grid()
    return grid.integrate(np.exp(2.0 * grid.synthesis(m.u)))


def gauss_bonnet_defect(m: ConformalMetricS2, grid: SphereGrid | None = None) -> float:
    """Relative deviation of the integrated curvature from 4*pi."""
    grid = grid or m.grid()
    K = gauss_curvature(m, grid)
    dA = np.exp(2.0 * grid.synthesis(m.u))
    return abs(grid.integrate(K * dA) - 4.0 * math.pi) / (4.0 * math.pi)


def pinching_report_s2(m: ConformalMetricS2, grid: SphereGrid | None = None) -> PinchingReport:
    # a surface has a single 2-plane per point, so the pointwise ratio is
    # always 1 and pinching reduces to positivity of K
    grid = grid or m.grid()
    K = gauss_curvature(m, grid)
    K_min, K_max = float(K.min()), float(K.max())
    verdict = Verdict.PINCHED if K_min > 0.0 else Verdict.NOT_PINCHED
    ratio = K_max / K_min if K_min > 0.0 else math.inf
    return PinchingReport(K_min, K_max, ratio, verdict, grid.size)


def curvature_field(m: ConformalMetricS2, grid: SphereGrid | None = None) -> HarmonicField:
    grid = grid or m.grid()
    return grid.analysis(gauss_curvature(m, grid)).resized(m.L)
