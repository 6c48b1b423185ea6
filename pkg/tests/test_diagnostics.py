import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import ortho_group

from vecbern.diagnostics import (
    acf, coarea_perimeter, constant_sign_component, constant_sign_components, density,
    flatness, oscillation, ratio_fields, sphere_integral_sq, sphere_points,
    viscosity_slope, weiss, weiss_profile,
)
from vecbern.errors import DomainError, NoBoundaryError, NotFlatError, ResolutionError
from vecbern.fields import Grid, VectorField, positivity_mask

G = Grid.box(2, 129)
X = G.coords()
HP = VectorField(G, np.maximum(X[1], 0)[None])


def vf(values, grid=G):
    return VectorField(grid, values)


# ---------------------------------------------------------------- spheres


@pytest.mark.parametrize("d", [2, 3])
def test_sphere_points_lie_on_sphere(d):
    pts = sphere_points(d, 0.3)
    assert len(pts) == 64 * d * d
    assert np.allclose(np.linalg.norm(pts, axis=1), 0.3)
    assert np.allclose(pts.mean(axis=0), 0, atol=1e-2)


def test_sphere_integral_of_linear_field():
    U = vf(np.stack([X[0], X[1]]))
    # |U|^2 = r^2 on the circle of length 2 pi r
    assert sphere_integral_sq(U, (0, 0), 0.5) == pytest.approx(2 * math.pi * 0.125, rel=1e-6)


# ---------------------------------------------------------------- weiss


@pytest.mark.parametrize("values,W", [
    (np.maximum(X[1], 0)[None], math.pi / 2),
    (np.stack([X[0], X[1]]), math.pi),
    (X[1][None], math.pi),
    (np.stack([0.6 * np.maximum(X[1], 0), 0.8 * np.maximum(X[1], 0)]), math.pi / 2),
])
def test_weiss_of_homogeneous_fields(values, W):
    U = vf(values)
    for r in (0.2, 0.5):
        s = weiss(U, 1.0, (0, 0), r)
        assert s.W0 == pytest.approx(0.0, abs=2e-3)
        assert s.W == pytest.approx(W, abs=5e-3)
        assert s.W == s.W0 + s.density_term
        assert s.density_term == pytest.approx(math.pi * s.density)


def test_weiss_of_zero_field_vanishes():
    s = weiss(VectorField.zeros(G), 1.0, (0.1, 0.2), 0.3)
    assert s.W == 0.0 and s.density == 0.0


def test_weiss_errors():
    with pytest.raises(ResolutionError):
        weiss(HP, 1.0, (0, 0), 3 * G.h)
    with pytest.raises(DomainError):
        weiss(HP, 1.0, (0.8, 0), 0.3)
    with pytest.raises(ValueError):
        weiss(HP, 0.0, (0, 0), 0.3)


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 1000))
def test_weiss_is_rotation_invariant(seed):
    U = vf(np.stack([np.maximum(X[1], 0), np.maximum(X[0] + 0.1, 0), X[0] * X[1]]))
    Q = ortho_group.rvs(3, random_state=seed)
    a = weiss(U, 2.0, (0.05, -0.1), 0.4)
    b = weiss(U.rotate(Q), 2.0, (0.05, -0.1), 0.4)
    assert b.W == pytest.approx(a.W, rel=1e-9, abs=1e-12)


def test_weiss_profile_detects_nonmonotone_field():
    radii = np.linspace(0.1, 0.8, 15)
    _, ok = weiss_profile(HP, 1.0, (0, 0), radii)
    assert ok < 1e-3
    r = np.hypot(X[0], X[1])
    flipped = np.where((r > 0.2) & (r < 0.3), -1.0, 1.0) * np.maximum(X[1], 0)
    _, bad = weiss_profile(vf(flipped[None]), 1.0, (0, 0), radii)
    assert bad > 0.1
    with pytest.raises(ValueError):
        weiss_profile(HP, 1.0, (0, 0), [0.3, 0.2, 0.4])


# ---------------------------------------------------------------- density


def test_density_examples():
    M = positivity_mask(HP)
    assert density(M, (0, 0), 0.3) == pytest.approx(0.5, abs=1e-3)
    assert density(M, (0, 0.5), 0.3) == 1.0
    assert density(M, (0, -0.5), 0.3) == 0.0
    with pytest.raises(ValueError):
        density(M, (0, 0), 0.0)


@settings(max_examples=20, deadline=None)
@given(st.floats(-0.4, 0.4), st.floats(-0.4, 0.4), st.floats(0.05, 0.5), st.floats(0, 0.3))
def test_density_is_monotone_under_inclusion(x, y, r, shift):
    small = positivity_mask(vf(np.maximum(X[1] - shift, 0)[None]))
    large = positivity_mask(HP)
    assert density(small, (x, y), r) <= density(large, (x, y), r) + 1e-12


# ---------------------------------------------------------------- acf


def test_acf_examples():
    v = vf(X[0][None])
    assert acf(v, (0, 0), 0.5) == pytest.approx((math.pi / 2) ** 2, rel=1e-2)
    assert acf(vf(np.abs(X[0])[None]), (0, 0), 0.5) == 0.0
    assert acf(v.values[0], (0, 0), 0.5, grid=G) == acf(v, (0, 0), 0.5)
    with pytest.raises(ValueError):
        acf(vf(np.stack([X[0], X[1]])), (0, 0), 0.5)
    with pytest.raises(ValueError):
        acf(v.values[0], (0, 0), 0.5)


@settings(max_examples=10, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-0.3, 0.3), st.floats(0.1, 0.5))
def test_acf_is_symmetric_in_sign(a, b, c, r):
    v = vf((a * X[0] + b * X[1] + c + X[0] * X[1])[None])
    w = vf(-v.values)
    assert acf(w, (0, 0), r) == pytest.approx(acf(v, (0, 0), r), rel=1e-12, abs=1e-15)


def test_acf_three_dimensional_weight():
    g = Grid.box(3, 49)
    Y = g.coords()
    v = VectorField(g, Y[2][None])
    # r^-2 int_{B_r, x3 > 0} |x|^-1 = pi for every r
    assert acf(v, (0, 0, 0), 0.5) == pytest.approx(math.pi**2, rel=5e-2)


# ---------------------------------------------------------------- coarea


def test_coarea_examples():
    est = coarea_perimeter(HP, 1.0, 0.1)
    assert est.perimeter == pytest.approx(2.0, rel=0.1)
    assert est.band_measure == pytest.approx(0.2, rel=0.05)
    assert est.constant == pytest.approx(4.0, rel=0.1)
    zero = coarea_perimeter(VectorField.zeros(G), 1.0, 0.1)
    assert zero.perimeter == 0.0 and zero.band_measure == 0.0
    with pytest.raises(ValueError):
        coarea_perimeter(HP, 1.0, 0.1, tau=0.2)


# ---------------------------------------------------------------- flatness


def test_flatness_of_halfplane_is_small():
    for n in (33, 65, 129):
        g = Grid.box(2, n)
        Y = g.coords()
        M = positivity_mask(VectorField(g, np.maximum(Y[1] - 0.013, 0)[None]))
        fs = flatness(M, (0, 0.013), 0.25)
        assert fs.delta <= g.h / 0.25
        assert abs(abs(fs.normal[1]) - 1) < 1e-9


def test_flatness_of_corner_and_circle():
    corner = positivity_mask(vf(np.maximum(np.maximum(X[0], X[1]), 0)[None]))
    assert flatness(corner, (0, 0), 0.25).delta > 0.25
    circle = positivity_mask(vf(np.maximum(0.5 - np.hypot(X[0], X[1] + 0.5), 0)[None]))
    deltas = [flatness(circle, (0, 0), r).delta for r in (0.4, 0.2, 0.1)]
    assert deltas[0] > deltas[1] > deltas[2]


def test_flatness_without_boundary():
    with pytest.raises(NoBoundaryError):
        flatness(positivity_mask(HP), (0, 0.6), 0.2)


# ---------------------------------------------------------------- slope


def test_viscosity_slope_examples():
    M = positivity_mask(HP)
    s = viscosity_slope(HP, M, (0.1, 0.0), lam=1.0)
    assert s.slope == pytest.approx(1.0, abs=0.05) and s.satisfied
    assert s.normal[1] > 0
    two = vf(2 * HP.values)
    s2 = viscosity_slope(two, positivity_mask(two), (0.1, 0.0), lam=1.0)
    assert s2.slope == pytest.approx(2.0, abs=0.1) and s2.satisfied is False
    assert viscosity_slope(HP, M, (0.1, 0.0)).satisfied is None


def test_viscosity_slope_rejects_corner():
    U = vf(np.maximum(np.maximum(X[0], X[1]), 0)[None])
    with pytest.raises(NotFlatError):
        viscosity_slope(U, positivity_mask(U), (0, 0))


# ---------------------------------------------------------------- constant sign


def test_constant_sign_examples():
    M = positivity_mask(HP)
    c = constant_sign_component(HP, M, (0, 0), 0.25)
    assert (c.index, c.sign, c.c_sign) == (0, 1, pytest.approx(1.0))
    s = math.sqrt(0.5)
    U = vf(np.stack([s * np.maximum(X[1], 0), -s * np.maximum(X[1], 0)]))
    M = positivity_mask(U)
    found = constant_sign_components(U, M, (0, 0), 0.25)
    assert [(f.index, f.sign) for f in found] == [(0, 1), (1, -1)]
    assert all(f.c_sign == pytest.approx(math.sqrt(2)) for f in found)
    assert constant_sign_component(U, M, (0, 0), 0.25).index == 0
    T = vf(X[1][None])
    assert constant_sign_component(T, positivity_mask(T), (0, 0), 0.25) is None


def test_ratio_fields():
    xi = np.array([0.6, -0.8])
    U = vf(xi[:, None, None] * np.maximum(X[1], 0))
    ratios, g = ratio_fields(U, positivity_mask(U), 0)
    pos = X[1] > 0
    assert np.allclose(ratios[1][pos], -0.8 / 0.6)
    assert np.allclose(g[pos], 0.6)
    assert np.all(np.isnan(g[~pos]))
    S = vf(np.maximum(X[1], 0)[None])
    _, g1 = ratio_fields(S, positivity_mask(S), 0)
    assert np.all(g1[pos] == 1.0)
    with pytest.raises(IndexError):
        ratio_fields(U, positivity_mask(U), 2)


def test_ratio_oscillation_shrinks_toward_boundary_point():
    U = vf(np.stack([np.maximum(X[1], 0), (0.5 + 0.3 * X[0]) * np.maximum(X[1], 0)]))
    ratios, _ = ratio_fields(U, positivity_mask(U), 0)
    osc = oscillation(ratios[1], G, (0, 0), [0.4, 0.2, 0.1, 0.05])
    assert all(a > b for a, b in zip(osc, osc[1:]))
    assert osc[0] == pytest.approx(0.3 * 0.8, rel=0.05)
