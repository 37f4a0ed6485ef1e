import math

import numpy as np
import pytest

from srlab.control import Control, Path, h1_norm_sq, integrate
from srlab.models import heisenberg_dilate, heisenberg_distance, make_model
from srlab.srgeom import (
    EnergyOptions,
    GeodesicOptions,
    constant_speed,
    fit_controls,
    minimize_energy,
    path_energy,
    rate_function,
)

HEIS = make_model("heisenberg")
ORIGIN = np.zeros(3)
FAST = GeodesicOptions(restarts=2, grid_K=32)


@pytest.fixture(scope="module")
def straight():
    return minimize_energy(HEIS, ORIGIN, [1.0, 0.0, 0.0])


@pytest.fixture(scope="module")
def dido():
    return minimize_energy(HEIS, ORIGIN, [0.0, 0.0, 1.0 / math.pi])


def detour(a, K=512):
    return Control.from_function(lambda t: [t, a * math.sin(2 * math.pi * t)], K)


def test_unit_distance(straight):
    assert straight.converged
    assert straight.distance_estimate == pytest.approx(1.0, rel=0.01)
    assert straight.unique


def test_dido_distance(dido):
    assert dido.converged
    assert dido.distance_estimate == pytest.approx(2.0, rel=0.02)


def test_dido_records_several_minimisers(dido):
    # geodesics to a vertical point form a circle of rotated copies
    assert len(dido.alternatives) >= 1
    assert not dido.unique


def test_same_point_gives_zero_control():
    res = minimize_energy(HEIS, [0.2, 0.1, 0.3], [0.2, 0.1, 0.3])
    assert res.distance_estimate == 0.0
    assert np.all(res.h_star.values == 0.0)


@pytest.mark.parametrize("fixture", ["straight", "dido"])
def test_result_invariants(fixture, request):
    res = request.getfixturevalue(fixture)
    assert res.distance_estimate**2 <= res.energy + 1e-9
    assert res.endpoint_gap <= GeodesicOptions().tol_end
    assert res.energy == pytest.approx(h1_norm_sq(res.h_star))
    # constant speed: distance squared and energy agree
    assert res.distance_estimate**2 == pytest.approx(res.energy, rel=1e-3)


def test_seeded_runs_are_identical():
    a = minimize_energy(HEIS, ORIGIN, [0.5, 0.3, 0.2], FAST)
    b = minimize_energy(HEIS, ORIGIN, [0.5, 0.3, 0.2], FAST)
    np.testing.assert_array_equal(a.h_star.values, b.h_star.values)


def test_matches_oracle_off_axis():
    target = [0.5, 0.3, 0.2]
    res = minimize_energy(HEIS, ORIGIN, target, GeodesicOptions(restarts=4))
    assert res.distance_estimate == pytest.approx(heisenberg_distance(target), rel=0.01)


def test_symmetry():
    p, q = np.array([0.1, -0.2, 0.05]), np.array([0.6, 0.3, -0.1])
    d1 = minimize_energy(HEIS, p, q, FAST).distance_estimate
    d2 = minimize_energy(HEIS, q, p, FAST).distance_estimate
    assert abs(d1 - d2) < 0.02 * d1


def test_triangle_inequality_on_random_triples():
    rng = np.random.default_rng(5)
    violations = 0
    for _ in range(20):
        a, b, c = rng.uniform(-0.5, 0.5, size=(3, 3))
        dab = minimize_energy(HEIS, a, b, FAST).distance_estimate
        dbc = minimize_energy(HEIS, b, c, FAST).distance_estimate
        dac = minimize_energy(HEIS, a, c, FAST).distance_estimate
        if dac > dab + dbc:
            violations += 1
            assert dac <= 1.02 * (dab + dbc)
    assert violations <= 2


def test_finer_grid_is_no_worse():
    target = [0.4, 0.2, 0.3]
    coarse = minimize_energy(HEIS, ORIGIN, target, GeodesicOptions(restarts=3, grid_K=32))
    fine = minimize_energy(HEIS, ORIGIN, target, GeodesicOptions(restarts=3, grid_K=128))
    assert fine.distance_estimate <= coarse.distance_estimate + 1e-3


@pytest.mark.parametrize("lam", [0.5, 2.0])
def test_dilation_homogeneity(lam):
    p = np.array([0.3, 0.1, 0.15])
    d = minimize_energy(HEIS, ORIGIN, p, FAST).distance_estimate
    dl = minimize_energy(HEIS, ORIGIN, heisenberg_dilate(p, lam), FAST).distance_estimate
    assert dl == pytest.approx(lam * d, rel=0.02)


def test_torus_distance_is_found():
    torus = make_model("torus_hypo")
    res = minimize_energy(torus, [0.0, 0.0], [1.0, 1.0], FAST)
    assert res.converged
    # y can only move where sin x is nonzero, so the path is longer than the chord
    assert math.sqrt(2.0) < res.distance_estimate < 3.0


def test_constant_speed_preserves_trace():
    h = Control.from_function(lambda t: [t**3, math.sin(t)], 400)
    g = constant_speed(h)
    speeds = np.linalg.norm(g.increments, axis=1) * g.grid_K
    assert speeds.std() / speeds.mean() < 1e-2
    np.testing.assert_allclose(g.values[-1], h.values[-1])


def test_path_energy_round_trip():
    h = Control.from_function(lambda t: [math.sin(2 * t), t * t - 0.5 * t], 256)
    gamma = integrate(HEIS, ORIGIN, h)
    assert path_energy(HEIS, gamma) == pytest.approx(h1_norm_sq(h), rel=0.01)


def test_vertical_segment_is_not_horizontal():
    gamma = Path(np.column_stack([np.zeros(33), np.zeros(33), np.linspace(0, 1, 33)]))
    assert path_energy(HEIS, gamma) == math.inf


def test_constant_path_has_zero_energy():
    assert path_energy(HEIS, Path(np.tile([0.1, 0.2, 0.3], (20, 1)))) == 0.0


def test_fit_controls_residuals():
    h = Control.from_function(lambda t: [t, 0.0], 16)
    slopes, resid, speed = fit_controls(HEIS, integrate(HEIS, ORIGIN, h))
    np.testing.assert_allclose(slopes, np.tile([1.0, 0.0], (16, 1)), atol=1e-12)
    assert resid.max() < 1e-12


def test_rate_of_minimiser_is_zero(straight):
    assert rate_function(HEIS, ORIGIN, [1, 0, 0], straight.path, straight.distance_estimate) == pytest.approx(
        0.0, abs=1e-3
    )


@pytest.mark.parametrize("a", [0.1, 0.3])
def test_rate_of_detour_matches_energy_gap(a):
    h = detour(a)
    gamma = integrate(HEIS, ORIGIN, h)
    np.testing.assert_allclose(gamma.end, [1.0, 0.0, 0.0], atol=1e-9)
    E = h1_norm_sq(h)
    J = rate_function(HEIS, ORIGIN, [1, 0, 0], gamma, 1.0)
    assert J == pytest.approx(0.5 * (E - 1.0), rel=0.01)
    assert J == pytest.approx(math.pi**2 * a * a, rel=0.01)


def test_rate_of_non_horizontal_path_is_infinite():
    gamma = Path(np.column_stack([np.linspace(0, 1, 33), np.zeros(33), np.linspace(0, 0.5, 33)]))
    assert rate_function(HEIS, ORIGIN, [1.0, 0.0, 0.5], gamma, heisenberg_distance([1, 0, 0.5])) == math.inf


def test_rate_is_clamped_nonnegative():
    gamma = integrate(HEIS, ORIGIN, Control.from_function(lambda t: [t, 0.0], 32))
    # an overestimated distance would give a negative value
    assert rate_function(HEIS, ORIGIN, [1, 0, 0], gamma, 1.0 + 1e-9) == 0.0


def test_horizontality_tolerance_is_configurable():
    h = Control.from_function(lambda t: [t, 0.0], 32)
    pts = integrate(HEIS, ORIGIN, h).points.copy()
    pts[:, 2] += 0.002 * np.linspace(0, 1, 33)
    gamma = Path(pts)
    assert path_energy(HEIS, gamma) < math.inf
    assert path_energy(HEIS, gamma, EnergyOptions(horizontality_tol=1e-4)) == math.inf
