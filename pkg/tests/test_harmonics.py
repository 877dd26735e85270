import math

import numpy as np
import pytest
import scipy.special
from hypothesis import given
from hypothesis import strategies as st

from fiberround.harmonics import (
    HarmonicField,
    basis,
    cartesian_to_spherical,
    index,
    lm_arrays,
    random_field,
    sphere_grid,
)


def random_points(rng, n):
    p = rng.standard_normal((n, 3))
    return p / np.linalg.norm(p, axis=1, keepdims=True)


def scipy_real_harmonics(points, L):
    """Real orthonormal harmonics from scipy's complex ones, without the Condon-Shortley phase."""
    colat, lon = cartesian_to_spherical(points)
    out = np.empty((points.shape[0], (L + 1) ** 2))
    for l in range(L + 1):
        for m in range(-l, l + 1):
            Y = scipy.special.sph_harm_y(l, abs(m), colat, lon)
            cs = (-1) ** abs(m)
            if m == 0:
                out[:, index(l, m)] = Y.real
            elif m > 0:
                out[:, index(l, m)] = cs * math.sqrt(2.0) * Y.real
            else:
                out[:, index(l, m)] = cs * math.sqrt(2.0) * Y.imag
    return out


def test_basis_matches_scipy(rng):
    pts = random_points(rng, 50)
    assert np.max(np.abs(basis(pts, 12) - scipy_real_harmonics(pts, 12))) < 1e-12


def test_quadrature_orthonormality():
    grid = sphere_grid(16)
    G = grid.weighted_Y.T @ grid.Y
    assert np.max(np.abs(G - np.eye(G.shape[0]))) < 1e-12


def test_analysis_inverts_synthesis(rng):
    grid = sphere_grid(20)
    f = random_field(rng, 20)
    back = grid.analysis(grid.synthesis(f))
    assert np.max(np.abs(back.resized(20).coeffs - f.coeffs)) < 1e-12


def test_grid_pairs_antipodes():
    grid = sphere_grid(24)
    assert np.max(np.abs(grid.points[grid.antipode_index] + grid.points)) < 1e-14


def test_laplacian_eigenvalues():
    f = HarmonicField.from_modes({(3, -2): 1.0, (5, 4): 2.0}, 8)
    lap = f.laplacian()
    assert lap[(3, -2)] == pytest.approx(-12.0)
    assert lap[(5, 4)] == pytest.approx(-60.0)


def test_point_evaluator_matches_basis(rng):
    f = random_field(rng, 24)
    pts = random_points(rng, 40)
    val, grad = f.value_and_gradient(pts)
    Y, G = basis(pts, 24, gradient=True)
    assert np.max(np.abs(val - Y @ f.coeffs)) < 1e-12
    assert np.max(np.abs(grad - np.einsum("pkc,k->pc", G, f.coeffs))) < 1e-11


def test_gradient_matches_finite_differences(rng):
    f = random_field(rng, 10)
    p = random_points(rng, 5)
    _, grad = f.value_and_gradient(p)
    t = np.cross(p, rng.standard_normal((5, 3)))
    t /= np.linalg.norm(t, axis=1, keepdims=True)
    h = 1e-6
    fd = (f(np.cos(h) * p + np.sin(h) * t) - f(np.cos(h) * p - np.sin(h) * t)) / (2 * h)
    assert np.max(np.abs(fd - np.sum(grad * t, axis=1))) < 1e-7
    assert np.max(np.abs(np.sum(grad * p, axis=1))) < 1e-12  # tangential


@given(l=st.integers(0, 12), data=st.data())
def test_parity_of_degree(l, data):
    m = data.draw(st.integers(-l, l))
    rng = np.random.default_rng(l * 31 + m)
    pts = random_points(rng, 8)
    Y = basis(pts, 12)[:, index(l, m)]
    Yneg = basis(-pts, 12)[:, index(l, m)]
    assert np.max(np.abs(Yneg - (-1) ** l * Y)) < 1e-12


def test_even_random_field_has_no_odd_mass(rng):
    f = random_field(rng, 16, even=True)
    ls, _ = lm_arrays(16)
    assert f.odd_mass() == 0.0
    assert np.any(f.coeffs[ls % 2 == 0] != 0.0)


def test_json_roundtrip(rng):
    f = random_field(rng, 6)
    g = HarmonicField.from_json(f.to_json())
    assert np.array_equal(f.coeffs, g.coeffs)
