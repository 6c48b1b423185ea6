import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vecbern.fields import Grid, VectorField
from vecbern.oracles import (
    PERTURBATIONS, energy_compare, halfplane, halfspace_box_volume, linear,
    oned_brute_force, oned_closed_form, oracle_1d, perturbation_battery,
)
from vecbern.solver import BoundaryDatum, SolveConfig, solve

G = Grid.box(2, 129)
LINE = Grid(1, 1025, 1 / 1024, (0.0,))


def monte_carlo_volume(grid, nu, m=400_000, seed=0):
    pts = np.random.default_rng(seed).uniform(grid.lower, grid.upper, (m, grid.d))
    return float(np.mean(pts @ nu > 0) * grid.volume)


# ---------------------------------------------------------------- geometry


@pytest.mark.parametrize("grid", [Grid.box(2, 5), Grid.box(3, 5), Grid(2, 11, 0.1, (0.0, -0.3)),
                                  Grid(3, 11, 0.1, (-0.2, -0.7, -0.5))])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_halfspace_volume_matches_monte_carlo(grid, seed):
    nu = np.random.default_rng(seed).normal(size=grid.d)
    nu /= np.linalg.norm(nu)
    assert halfspace_box_volume(grid, nu) == pytest.approx(monte_carlo_volume(grid, nu),
                                                           abs=0.01 * grid.volume)


@settings(max_examples=25, deadline=None)
@given(st.floats(0, 2 * math.pi))
def test_halfspace_volume_of_centered_box_is_half(angle):
    nu = np.array([math.cos(angle), math.sin(angle)])
    assert halfspace_box_volume(G, nu) == pytest.approx(2.0, abs=1e-12)


def test_axis_aligned_halfspace_volume():
    g = Grid(2, 11, 0.1, (0.0, -0.3))
    assert halfspace_box_volume(g, (0.0, 1.0)) == pytest.approx(0.7)
    assert halfspace_box_volume(g, (1.0, 0.0)) == pytest.approx(1.0)
    assert halfspace_box_volume(g, (-1.0, 0.0)) == pytest.approx(0.0)


# ---------------------------------------------------------------- halfplane


def test_halfplane_oracle_energy():
    case = halfplane([1.0], [0.0, 1.0], G, 1.0)
    assert case.exact_energy.total == pytest.approx(4.0)
    assert case.check()
    assert case.extra["density"] == 0.5
    assert case.extra["weiss"] == pytest.approx(math.pi / 2)
    case = halfplane([0.48, 0.6, 0.64], [0.6, 0.8], G, 1.0)
    assert case.k == 3 and case.check()
    g3 = Grid.box(3, 33)
    case = halfplane([math.sqrt(2)], [0, 0, 1], g3, 2.0)
    assert case.exact_energy.total == pytest.approx(16.0) and case.check()


@pytest.mark.parametrize("xi,nu,lam", [([1.0], [0, 2.0], 1.0), ([1.0], [0, 1.0], 2.0),
                                       ([1.0], [0, 0, 1.0], 1.0), ([1.0], [0, 1.0], 0.0)])
def test_halfplane_oracle_validation(xi, nu, lam):
    with pytest.raises(ValueError):
        halfplane(xi, nu, G, lam)


# ---------------------------------------------------------------- linear


def test_linear_oracle_flags():
    case, flag = linear([[1.0, 0.0]], G, 1.0)
    assert flag and case.extra["definitive"] and case.exact_energy.total == pytest.approx(8.0)
    case, flag = linear([[0.5, 0.0]], G, 1.0)
    assert not flag and case.extra["definitive"]
    case, flag = linear(np.eye(2), G, 1.0)
    assert flag and case.extra["rank"] == 2 and case.extra["norm"] == 2.0
    case, flag = linear([[0.5, 0.0], [0.0, 0.5]], G, 1.0)
    assert not flag and not case.extra["definitive"]
    case, flag = linear([[0.0, 0.0]], G, 1.0)
    assert case.exact_energy.total == 0.0 and case.exact_boundary == {"kind": "none"}
    with pytest.raises(ValueError):
        linear([[1.0, 0.0, 0.0]], G, 1.0)


# ---------------------------------------------------------------- 1-D


@pytest.mark.parametrize("a,s,E", [(0.0, 0.0, 0.0), (0.5, 0.5, 1.0), (1.0, 1.0, 2.0),
                                   (1.5, 1.0, 3.25)])
def test_oned_closed_form(a, s, E):
    assert oned_closed_form(a, 1.0) == (pytest.approx(s), pytest.approx(E))


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 3.0), st.floats(0.1, 4.0))
def test_oned_closed_form_is_minimal(a, lam):
    s, E = oned_closed_form(a, lam)
    grid_s = np.linspace(1e-3, 1, 2000)
    assert E <= np.min(a * a / grid_s + lam * grid_s) + 1e-12
    assert E == pytest.approx(a * a / s + lam * s)
    s_bf, e_bf = oned_brute_force(a, lam, LINE)
    assert e_bf >= E - 1e-12
    assert abs(s_bf - s) <= math.sqrt(2 * LINE.h) + LINE.h


def test_oracle_1d_case():
    case = oracle_1d(0.5, 1.0, LINE)
    assert case.exact_energy.total == pytest.approx(1.0)
    assert case.extra["brute_s"] == pytest.approx(0.5) and case.extra["brute_energy"] == 1.0
    # the discrete positive set ends at the default threshold, 5e-9 early
    assert case.consistency_gap() < 1e-8
    with pytest.raises(ValueError):
        oracle_1d(0.5, 1.0, Grid(1, 11, 0.2, (0.0,)))
    with pytest.raises(ValueError):
        oned_closed_form(-1.0, 1.0)


def test_oracle_manifest_is_plain():
    m = halfplane([1.0], [0.0, 1.0], G, 1.0).manifest()
    assert m["case"] == "halfplane" and m["exact_energy"]["total"] == pytest.approx(4.0)
    assert m["boundary"]["normal"] == [0.0, 1.0]


# ---------------------------------------------------------------- comparison


def test_energy_compare():
    case = halfplane([1.0], [0.0, 1.0], G, 1.0)
    assert energy_compare(case, case.exact_field) == 0.0
    vals = np.array(case.exact_field.values)
    vals[:, 1:-1, 64:67] = 0.0
    assert energy_compare(case, VectorField(G, vals)) > 0
    vals = np.array(case.exact_field.values)
    vals[:, 0, 80] += 1.0
    with pytest.raises(ValueError):
        energy_compare(case, VectorField(G, vals))
    with pytest.raises(ValueError):
        energy_compare(case, VectorField.zeros(Grid.box(2, 65)))


def test_subcritical_linear_oracle_is_beaten_by_solver():
    g = Grid.box(2, 65)
    case, flag = linear([[0.5, 0.0]], g, 1.0)
    assert not flag
    U, _ = solve(g, BoundaryDatum.from_field(case.exact_field), SolveConfig())
    assert energy_compare(case, U) < -0.5


@pytest.mark.parametrize("make", [
    lambda: halfplane([1.0], [0.0, 1.0], G, 1.0),
    lambda: halfplane([0.6, 0.8], [math.sqrt(0.5), math.sqrt(0.5)], G, 1.0),
    lambda: linear(np.eye(2), G, 1.0)[0],
    lambda: linear([[1.0, 0.0]], G, 1.0)[0],
])
def test_battery_never_beats_minimal_cases(make):
    case = make()
    battery = perturbation_battery(case, seed=0)
    assert [name for name, _ in battery] == list(PERTURBATIONS)
    for name, cand in battery:
        assert energy_compare(case, cand) >= -case.energy_budget, name


def test_battery_is_seeded():
    case = halfplane([1.0], [0.0, 1.0], G, 1.0)
    a = perturbation_battery(case, seed=3)
    b = perturbation_battery(case, seed=3)
    c = perturbation_battery(case, seed=4)
    assert all(np.array_equal(x.values, y.values) for (_, x), (_, y) in zip(a, b))
    assert any(not np.array_equal(x.values, y.values) for (_, x), (_, y) in zip(a, c))
    for _, cand in a:
        bnd = G.boundary_nodes()
        assert np.array_equal(cand.values[:, bnd], case.exact_field.values[:, bnd])
