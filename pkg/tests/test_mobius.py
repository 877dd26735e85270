import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fiberround.geometry import ConformalMetricS2, gauss_curvature
from fiberround.harmonics import HarmonicField
from fiberround.mobius import ETA, Mobius, MobiusFitError, mobius_extract, random_mobius
from fiberround.procrustes import fit_orthogonal, orthogonality_error

vec3 = st.tuples(*[st.floats(-0.6, 0.6)] * 3)


def sphere_points(rng, n):
    p = rng.standard_normal((n, 3))
    return p / np.linalg.norm(p, axis=1, keepdims=True)


@given(rot=vec3, boost=vec3, reflect=st.booleans())
def test_lorentz_group_membership(rot, boost, reflect):
    m = Mobius.from_params(rot, boost, reflect)
    A = m.matrix
    assert np.max(np.abs(A.T @ ETA @ A - ETA)) < 1e-12
    assert np.max(np.abs((m @ m.inverse()).matrix - np.eye(4))) < 1e-12


@given(rot=vec3, boost=vec3)
def test_action_and_inverse(rot, boost):
    m = Mobius.from_params(rot, boost)
    p = sphere_points(np.random.default_rng(0), 20)
    q = m(p)
    assert np.max(np.abs(np.linalg.norm(q, axis=1) - 1.0)) < 1e-13
    assert np.max(np.abs(m.inverse()(q) - p)) < 1e-12


def test_composition_is_action(rng):
    a, b = random_mobius(rng), random_mobius(rng)
    p = sphere_points(rng, 10)
    assert np.max(np.abs((a @ b)(p) - a(b(p)))) < 1e-13


def test_differential_and_conformal_factor(rng):
    m = random_mobius(rng)
    p = sphere_points(rng, 10)
    t = np.cross(p, rng.standard_normal((10, 3)))
    h = 1e-6
    fd = (m(np.cos(h) * p + np.sin(h) * t) - m(np.cos(h) * p - np.sin(h) * t)) / (2 * h)
    D = m.differential(p, t)
    assert np.max(np.abs(fd - D)) < 1e-8
    ratio = np.linalg.norm(D, axis=1) / np.linalg.norm(t, axis=1)
    assert np.max(np.abs(ratio - 1.0 / m.scale(p))) < 1e-12


def test_decomposition(rng):
    m = random_mobius(rng)
    Q, b = m.decompose()
    assert orthogonality_error(Q) < 1e-13
    assert np.max(np.abs((Mobius.from_orthogonal(Q) @ Mobius.from_boost(b)).matrix - m.matrix)) < 1e-12


def test_pullback_is_round_and_extract_recovers_it(rng):
    for _ in range(5):
        m = random_mobius(rng)
        g = m.pullback_round()
        assert np.max(np.abs(gauss_curvature(g) - 1.0)) < 1e-9
        e = mobius_extract(g)
        assert np.max(np.abs(e.pullback_round().u.coeffs - g.u.coeffs)) < 1e-12


def test_push_forward_of_pullback_is_round(rng):
    m = random_mobius(rng)
    back = m.push_forward(m.pullback_round())
    assert np.max(np.abs(back.u.coeffs)) < 1e-12


def test_push_forward_keeps_even_flag():
    R = Mobius.from_params(rotvec=[0.1, 0.2, 0.3])
    g = ConformalMetricS2(HarmonicField.from_modes({(2, 1): 0.05}), antipodal_even=True)
    assert R.push_forward(g).antipodal_even


def test_extract_rejects_non_round():
    g = ConformalMetricS2(HarmonicField.from_modes({(2, 0): 0.05}))
    with pytest.raises(ValueError):
        mobius_extract(g)


def test_fit_error_carries_residual():
    exc = MobiusFitError("bad", 0.5)
    assert exc.residual == 0.5


def test_procrustes_recovers_orthogonal(rng):
    for reflect in (False, True):
        Q = np.linalg.qr(rng.standard_normal((3, 3)))[0]
        if (np.linalg.det(Q) < 0) != reflect:
            Q[:, 0] *= -1
        x = sphere_points(rng, 50)
        fit = fit_orthogonal(x, x @ Q.T)
        assert np.max(np.abs(fit.matrix - Q)) < 1e-13 and fit.residual < 1e-13


def test_procrustes_reports_non_orthogonal(rng):
    x = sphere_points(rng, 50)
    m = Mobius.from_boost([0.3, 0.0, 0.0])
    assert fit_orthogonal(x, m(x)).residual > 0.1
