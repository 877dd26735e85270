"""Seeded random metrics used by the experiments and tests."""

from __future__ import annotations

import numpy as np

from .geometry import ConformalMetricS2, pinching_report_s2
from .harmonics import DEFAULT_L, random_field, sphere_grid


def random_pinched_metric(rng: np.random.Generator, L: int = DEFAULT_L, max_sup: float = 0.1,
                          lmax: int = 6, even: bool = True, min_curvature: float = 0.05) -> ConformalMetricS2:
    """Random ``exp(2u) g0`` with ``|u|_inf <= max_sup`` and ``K >= min_curvature``.

    The amplitude is drawn in ``[max_sup/2, max_sup]`` and halved until the
    curvature bound holds, so higher modes (which dominate ``lap u``) never
    push the metric out of positive curvature.
    """
    grid = sphere_grid(L)
    u = random_field(rng, L, lmin=2, lmax=lmax, decay=1.0, even=even)
    u = u * (rng.uniform(0.5, 1.0) * max_sup / float(np.max(np.abs(grid.synthesis(u)))))
    while True:
        g = ConformalMetricS2(u, antipodal_even=even)
        if pinching_report_s2(g).K_min >= min_curvature:
            return g
        u = 0.5 * u
