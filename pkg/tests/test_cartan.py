import numpy as np
import pytest

from fiberround.cartan import (
    SphereMap,
    cartan_isometry,
    check_equivariance,
    check_isometry,
    descend_to_rp2,
    frame_defect,
    great_circle_distance,
    icosphere,
)
from fiberround.flow import FlowConfig, normalize_to_curvature_one, run_flow_to_round
from fiberround.geodesics import NORTH, gram_schmidt_frame
from fiberround.geometry import ConformalMetricS2
from fiberround.harmonics import HarmonicField
from fiberround.mobius import Mobius, random_mobius
from fiberround.samples import random_pinched_metric

ROUND = ConformalMetricS2.round()


def exact_cartan(m: Mobius):
    """``R o m`` with ``R`` orthogonal: the isometry of ``m* g0`` fixing N with the frame condition."""
    g = m.pullback_round()
    f = gram_schmidt_frame(g).vectors
    W = np.stack([m.differential(NORTH, f[0])[0], m.differential(NORTH, f[1])[0], m(NORTH)[0]], axis=1)
    R = np.linalg.solve(W.T, np.eye(3)).T  # R W = I
    return lambda x: m(x) @ R.T


def test_icosphere_counts():
    for depth, n in [(0, 12), (1, 42), (3, 642), (4, 2562)]:
        v, f = icosphere(depth)
        assert v.shape == (n, 3) and f.shape == (2 * n - 4, 3)
        assert np.max(np.abs(np.linalg.norm(v, axis=1) - 1.0)) < 1e-15


def test_identity_for_round_metric():
    phi = cartan_isometry(ROUND)
    assert np.max(np.abs(phi.images - phi.nodes)) < 1e-10
    assert check_equivariance(phi) < 1e-10


def test_mobius_metric_matches_exact_isometry(rng):
    for _ in range(3):
        m = random_mobius(rng)
        g = m.pullback_round()
        phi = cartan_isometry(g, depth=3)
        exact = exact_cartan(m)
        assert np.max(np.abs(phi.images - exact(phi.nodes))) < 1e-10
        x = icosphere(2)[0]
        assert np.max(np.abs(phi.inverse(exact(x)) - x)) < 1e-10
        assert np.max(np.abs(phi(NORTH[None]) - NORTH)) < 1e-10
        assert check_isometry(phi, g, ROUND) < 1e-4
        assert frame_defect(phi, g) < 1e-6


def test_non_round_is_rejected():
    with pytest.raises(ValueError, match="not round"):
        cartan_isometry(ConformalMetricS2(HarmonicField.from_modes({(2, 0): 0.05})))


def test_equivariance_on_even_flow_limit(rng):
    g0 = random_pinched_metric(rng, lmax=4)
    limit, _ = run_flow_to_round(g0, FlowConfig(dt_max=0.1, convergence_tol=1e-10))
    phi = cartan_isometry(normalize_to_curvature_one(limit), depth=3)
    assert check_equivariance(phi) < 1e-6
    q = descend_to_rp2(phi)
    assert q.well_definedness() < 1e-6


def test_continuity_under_mobius_path(rng):
    m1 = random_mobius(rng)
    b = rng.standard_normal(3)
    b /= np.linalg.norm(b)
    x = icosphere(2)[0]
    base = cartan_isometry(m1.pullback_round(), depth=2)(x)
    d = []
    for eps in (0.02, 0.01, 0.005):
        g = (m1 @ Mobius.from_boost(eps * b)).pullback_round()
        d.append(np.max(great_circle_distance(cartan_isometry(g, depth=2)(x), base)))
    assert d[0] / d[1] == pytest.approx(2.0, abs=0.2)
    assert d[1] / d[2] == pytest.approx(2.0, abs=0.2)


def test_sphere_map_text_roundtrip(rng):
    m = random_mobius(rng)
    phi = cartan_isometry(m.pullback_round(), depth=2)
    back = SphereMap.from_text(phi.to_text())
    assert np.array_equal(back.images, phi.images)
    assert back.triangulation_id == phi.triangulation_id


def test_interpolation_of_linear_map(rng):
    Q = np.linalg.qr(rng.standard_normal((3, 3)))[0]
    phi = SphereMap.linear(Q, depth=4)
    x = rng.standard_normal((50, 3))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    # barycentric interpolation of exact nodal values, renormalised to the sphere
    assert np.max(great_circle_distance(phi.interpolate(x), x @ Q.T)) < 1e-3


def test_map_is_consistent_near_cut_point(rng):
    m = random_mobius(rng)
    phi = cartan_isometry(m.pullback_round(), depth=2)
    # points straddling the image of the cut point
    target = np.array([[1e-4, 0.0, -1.0], [-1e-4, 0.0, -1.0], [0.0, 1e-4, -1.0]])
    target /= np.linalg.norm(target, axis=1, keepdims=True)
    src = phi.inverse(target)
    assert np.max(great_circle_distance(phi(src), target)) < 1e-8
