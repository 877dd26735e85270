"""Desk-scale structure-group reduction for sphere and projective-plane bundles.

Pinched fibre metrics are flowed to round metrics by the normalized Ricci
flow, mapped isometrically onto the standard sphere by a Cartan
construction, and used to conjugate bundle transitions into O(3).  A small
obstruction module decides the covering-fibration conditions on declared
homotopy data.
"""

from .flow import FlowConfig, FlowTrace, normalize_to_curvature_one, run_flow_to_round
from .geometry import ConformalMetricS2, gauss_curvature, pinching_report_s2
from .harmonics import HarmonicField, sphere_grid
from .milnor import MilnorMetricS3

__all__ = [
    "ConformalMetricS2",
    "FlowConfig",
    "FlowTrace",
    "HarmonicField",
    "MilnorMetricS3",
    "gauss_curvature",
    "normalize_to_curvature_one",
    "pinching_report_s2",
    "run_flow_to_round",
    "sphere_grid",
]
