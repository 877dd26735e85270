import math

import numpy as np
import pytest

from fiberround.geodesics import (
    NORTH,
    CutLocusProximity,
    TangentFrame,
    exp_map,
    g_norm,
    gram_schmidt_frame,
    log_map,
    round_log,
    standard_frame,
)
from fiberround.geometry import ConformalMetricS2
from fiberround.mobius import random_mobius


def great_circle_exp(p, v):
    s = np.linalg.norm(v, axis=1, keepdims=True)
    return np.cos(s) * p + np.sinc(s / np.pi) * v


def conjugation_exp(m, p, v):
    """exp of ``m* g0`` via the isometry ``m`` onto the round sphere."""
    return m.inverse()(great_circle_exp(m(p), m.differential(p, v)))


def tangent_vectors(rng, p, n, max_len):
    v = np.cross(p, rng.standard_normal((n, 3)))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * rng.uniform(0.1, max_len, (n, 1))


def test_round_exp_is_great_circle(rng):
    g = ConformalMetricS2.round()
    v = tangent_vectors(rng, np.broadcast_to(NORTH, (10, 3)), 10, 3.0)
    assert np.max(np.abs(exp_map(g, NORTH, v) - great_circle_exp(np.broadcast_to(NORTH, (10, 3)), v))) < 1e-10


def test_exp_matches_conjugation_oracle(rng):
    for _ in range(3):
        m = random_mobius(rng)
        g = m.pullback_round()
        p = np.broadcast_to(NORTH, (10, 3))
        v = tangent_vectors(rng, p, 10, 1.0)
        v = v / np.exp(g.u(p))[:, None] * rng.uniform(0.2, 2.5, (10, 1))
        assert np.max(np.abs(exp_map(g, p, v) - conjugation_exp(m, p, v))) < 1e-9


def test_log_inverts_exp(rng):
    m = random_mobius(rng)
    g = m.pullback_round()
    q = rng.standard_normal((10, 3))
    q[:, 2] = np.abs(q[:, 2]) + 0.5
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    v = log_map(g, NORTH, q)
    assert np.max(np.abs(exp_map(g, NORTH, v) - q)) < 1e-9
    # geodesic distance through the isometry
    d_round = np.arccos(np.clip(np.sum(m(np.broadcast_to(NORTH, q.shape)) * m(q), axis=1), -1, 1))
    assert np.max(np.abs(g_norm(g, np.broadcast_to(NORTH, q.shape), v) - d_round)) < 1e-9


def test_log_near_cut_point_is_refused():
    g = ConformalMetricS2.round()
    q = np.array([[math.sin(0.01), 0.0, -math.cos(0.01)]])
    with pytest.raises(CutLocusProximity):
        log_map(g, NORTH, q)


def test_exp_rejects_non_tangent_and_long_vectors():
    g = ConformalMetricS2.round()
    with pytest.raises(ValueError):
        exp_map(g, NORTH, [[0.0, 0.0, 1.0]])
    with pytest.raises(ValueError):
        exp_map(g, NORTH, [[4.0, 0.0, 0.0]])


def test_round_log_inverts_great_circle(rng):
    p = np.broadcast_to(NORTH, (5, 3))
    v = tangent_vectors(rng, p, 5, 3.0)
    assert np.max(np.abs(round_log(p, great_circle_exp(p, v)) - v)) < 1e-10


def test_frames(rng):
    f = standard_frame(NORTH)
    assert np.allclose(f.vectors, [[1, 0, 0], [0, 1, 0]])
    m = random_mobius(rng)
    g = m.pullback_round()
    gs = gram_schmidt_frame(g)
    G = np.array([[g.inner(NORTH[None], a, b)[0] for b in gs.vectors] for a in gs.vectors])
    assert np.max(np.abs(G - np.eye(2))) < 1e-12
    with pytest.raises(ValueError):
        TangentFrame(NORTH, np.array([[1.0, 0, 0], [2.0, 0, 0]]))
