import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srlab.models import (
    ModelError,
    _fd_jacobians,
    ambient_distance,
    bracket_rank,
    heisenberg_dilate,
    heisenberg_distance,
    heisenberg_heat_kernel,
    heisenberg_multiply,
    lie_bracket,
    make_model,
    model_from_config,
)

coords = st.floats(-3.0, 3.0, allow_nan=False)


def test_heisenberg_catalog_entry():
    m = make_model("heisenberg", {})
    assert (m.dim_m, m.num_fields_ell) == (3, 2)
    np.testing.assert_array_equal(m.eval_fields([0.0, 0.0, 0.0])[0], [1.0, 0.0, 0.0])
    F = m.eval_fields([2.0, 4.0, 1.0])
    np.testing.assert_allclose(F, [[1.0, 0.0, -2.0], [0.0, 1.0, 1.0]])
    assert not m.has_drift
    assert m.periodic_dims == ()
    assert m.oracles["compact"] is False


def test_heisenberg_bracket_is_vertical():
    m = make_model("heisenberg")
    np.testing.assert_allclose(lie_bracket(m, [0.3, -1.2, 4.0], 0, 1), [0.0, 0.0, 1.0])


def test_torus_catalog_entry():
    m = make_model("torus_hypo")
    assert (m.dim_m, m.num_fields_ell) == (2, 2)
    np.testing.assert_allclose(m.eval_fields([math.pi / 2, 0.0])[1], [0.0, 1.0])
    assert m.periodic_dims == (0, 1)


def test_custom_grushin_from_string():
    m = make_model("custom", fields="V1=(1,0);V2=(0,x0)")
    np.testing.assert_allclose(m.eval_fields([2.0, 5.0]), [[1.0, 0.0], [0.0, 2.0]])
    assert bracket_rank(m, [0.0, 0.0]) == 2


def test_custom_from_callables_with_fd_jacobians():
    m = make_model(
        "custom",
        fields=[lambda p: np.stack([np.ones_like(p[..., 0]), np.zeros_like(p[..., 0])], -1),
                lambda p: np.stack([np.zeros_like(p[..., 0]), p[..., 0] ** 2], -1)],
        dim_m=2,
    )
    dF, _ = m.eval_jacobians(np.array([1.5, 0.0]))
    assert dF[1, 1, 0] == pytest.approx(3.0, rel=1e-6)


def test_custom_drift_parsed():
    m = make_model("custom", fields="V1=(1,0);V=(0,-x1)")
    assert m.has_drift
    np.testing.assert_allclose(m.eval_drift([0.0, 2.0]), [0.0, -2.0])


@pytest.mark.parametrize(
    "spec",
    ["V1=(1,0", "V1=(1,0);V2=(0,y)", "V1=(__import__('os'),0)", "V1=(1,0);V3=(0,1)", "W=(1,0)",
     "V1=(1,0);V2=(0,0,1)", "V1=(1,x5)"],
)
def test_custom_rejects_bad_specs(spec):
    with pytest.raises(ModelError):
        make_model("custom", fields=spec)


def test_unknown_model_name():
    with pytest.raises(ModelError):
        make_model("klein_bottle")


def test_model_from_config_block():
    m = model_from_config({"name": "custom", "params": {"fields": "V1=(1,0);V2=(0,x0)"}})
    assert m.name == "custom"
    assert model_from_config("torus_hypo").name == "torus_hypo"


@pytest.mark.parametrize(
    "name,p,q,expected",
    [
        ("heisenberg", (0, 0, 0), (3, 4, 0), 5.0),
        ("torus_hypo", (0.1, 0.0), (2 * math.pi - 0.1, 0.0), 0.2),
        ("heisenberg", (1, 2, 3), (1, 2, 3), 0.0),
    ],
)
def test_ambient_distance_examples(name, p, q, expected):
    assert ambient_distance(make_model(name), p, q) == pytest.approx(expected, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(coords, min_size=6, max_size=6), st.lists(coords, min_size=3, max_size=3))
def test_ambient_distance_is_a_metric(pq, r):
    m = make_model("torus_hypo")
    p, q, s = np.array(pq[:2]), np.array(pq[2:4]), np.array(r[:2])
    dpq = ambient_distance(m, p, q)
    assert dpq == pytest.approx(ambient_distance(m, q, p), abs=1e-12)
    assert dpq <= ambient_distance(m, p, s) + ambient_distance(m, s, q) + 1e-12
    assert ambient_distance(m, p, p) == 0.0


@pytest.mark.parametrize("name", ["heisenberg", "torus_hypo"])
def test_jacobians_match_finite_differences(name):
    m = make_model(name)
    rng = np.random.default_rng(7)
    pts = rng.uniform(-3, 3, size=(100, m.dim_m))
    dF, dV = m.eval_jacobians(pts)
    fF, fV = _fd_jacobians(m, pts)
    scale = max(np.abs(dF).max(), 1.0)
    assert np.max(np.abs(dF - fF)) / scale < 1e-5
    assert np.max(np.abs(dV - fV)) < 1e-5


@pytest.mark.parametrize("name", ["heisenberg", "torus_hypo"])
def test_bracket_generating_at_random_points(name):
    m = make_model(name)
    rng = np.random.default_rng(3)
    for p in rng.uniform(-3, 3, size=(100, m.dim_m)):
        assert bracket_rank(m, p) == m.dim_m


@settings(max_examples=50, deadline=None)
@given(st.lists(coords, min_size=3, max_size=3))
def test_fields_finite(p):
    for name in ("heisenberg", "torus_hypo"):
        m = make_model(name)
        assert np.all(np.isfinite(m.eval_fields(np.array(p[: m.dim_m]))))


def test_heisenberg_distance_oracle_values():
    assert heisenberg_distance([1.0, 0.0, 0.0]) == pytest.approx(1.0)
    assert heisenberg_distance([0.0, 0.0, 1 / math.pi]) == pytest.approx(2.0)
    # half-circle: chord 2, turning angle pi, area pi/2, length pi
    assert heisenberg_distance([2.0, 0.0, math.pi / 2]) == pytest.approx(math.pi)


@settings(max_examples=30, deadline=None)
@given(st.lists(coords, min_size=3, max_size=3), st.sampled_from([0.5, 2.0]))
def test_heisenberg_distance_homogeneous(p, lam):
    d = heisenberg_distance(p)
    assert heisenberg_distance(heisenberg_dilate(p, lam)) == pytest.approx(lam * d, rel=1e-9, abs=1e-12)


def test_heisenberg_distance_left_invariant():
    g, p, q = np.array([0.3, -0.7, 1.1]), np.array([0.2, 0.1, 0.4]), np.array([-1.0, 0.5, 0.2])
    assert heisenberg_distance(heisenberg_multiply(g, p), heisenberg_multiply(g, q)) == pytest.approx(
        heisenberg_distance(p, q)
    )


def test_heisenberg_heat_kernel_at_origin():
    # int_0^inf s / sinh(s) ds = pi^2 / 4, so p_t(0, 0) = 1 / (4 t^2)
    for t in (0.5, 1.0, 2.0):
        assert heisenberg_heat_kernel(t, [0.0, 0.0, 0.0]) == pytest.approx(1 / (4 * t * t), rel=1e-6)


def test_heisenberg_heat_kernel_scaling():
    # p_t(x, y, z) = t^-2 p_1(x / sqrt t, y / sqrt t, z / t)
    p = np.array([0.4, -0.3, 0.2])
    t = 0.3
    lhs = heisenberg_heat_kernel(t, p)
    rhs = heisenberg_heat_kernel(1.0, [p[0] / math.sqrt(t), p[1] / math.sqrt(t), p[2] / t]) / t**2
    assert lhs == pytest.approx(rhs, rel=1e-6)
