import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import ks_2samp

from srlab.control import Path
from srlab.rough import (
    EXACT_LIMIT,
    brownian_paths,
    holder_norms,
    holder_stats,
    levy_area,
    rough_norm,
    rough_norms,
    tail_statistics,
)

small_paths = st.integers(2, 40).flatmap(
    lambda K: st.lists(st.floats(-5, 5, allow_nan=False), min_size=2 * (K + 1), max_size=2 * (K + 1)).map(
        lambda v: np.array(v).reshape(-1, 2)
    )
)


def chen_rhs(A, s, u, t):
    a, b = A.increment(s, u), A.increment(u, t)
    return A(s, u) + A(u, t) + 0.5 * (np.outer(a, b) - np.outer(b, a))


def test_linear_path_norm_is_one():
    w = np.linspace(0, 1, 101)[:, None] * np.array([1.0, 0.0, 0.0])
    st_ = holder_stats(w, 0.4)
    assert st_.full_norm == pytest.approx(1.0)
    assert st_.window_norm == pytest.approx(1.0)


def test_constant_and_single_point_paths():
    assert holder_stats(np.ones((50, 2))).full_norm == 0.0
    s = holder_stats(np.ones((1, 2)))
    assert (s.full_norm, s.window_norm) == (0.0, 0.0)


def test_accepts_path_objects():
    p = Path(np.column_stack([np.linspace(0, 1, 11), np.zeros(11)]))
    assert holder_stats(p, 0.4).full_norm == pytest.approx(1.0)


def test_alpha_outside_range_warns(caplog):
    with caplog.at_level(logging.WARNING):
        holder_stats(np.zeros((5, 1)), alpha=0.6)
    assert "outside" in caplog.text


def test_brownian_norm_increases_with_alpha():
    w = brownian_paths(np.random.default_rng(0), 1, 1024, ell=2)[0]
    assert holder_stats(w, 0.45).full_norm < holder_stats(w, 0.49).full_norm


def test_brute_force_agreement():
    rng = np.random.default_rng(1)
    w = rng.normal(size=(30, 2)).cumsum(0)
    K = 29
    best = 0.0
    for s in range(K + 1):
        for t in range(s + 1, K + 1):
            best = max(best, np.linalg.norm(w[t] - w[s]) / ((t - s) / K) ** 0.4)
    assert holder_stats(w, 0.4).full_norm == pytest.approx(best, rel=1e-12)


def test_window_restriction():
    # a jump over a long lag is invisible to a short window
    w = np.zeros((65, 1))
    w[32:] = 1.0
    s = holder_stats(w, 0.4, window_n=8)
    assert s.window_norm == pytest.approx(1.0 / (1 / 64) ** 0.4)
    ramp = np.linspace(0, 1, 65)[:, None]
    r = holder_stats(ramp, 0.4, window_n=8)
    assert r.window_norm == pytest.approx((1 / 8) ** 0.6)
    assert r.window_norm < r.full_norm


def test_periodic_differences_are_wrapped():
    w = np.column_stack([np.linspace(0, 2 * math.pi, 33) % (2 * math.pi), np.zeros(33)])
    plain = holder_stats(w, 0.4).full_norm
    wrapped = holder_stats(w, 0.4, periodic_dims=(0,)).full_norm
    assert wrapped < plain


@settings(max_examples=40, deadline=None)
@given(small_paths, st.integers(1, 6))
def test_holder_invariants(w, n):
    s = holder_stats(w, 0.4, window_n=n)
    assert 0.0 <= s.window_norm <= s.full_norm
    assert holder_stats(w, 0.4, window_n=1).window_norm == s.full_norm
    rev = holder_stats(w[::-1], 0.4, window_n=n)
    assert rev.full_norm == pytest.approx(s.full_norm, rel=1e-12, abs=1e-12)
    assert rev.window_norm == pytest.approx(s.window_norm, rel=1e-12, abs=1e-12)
    assert s.in_C_N(s.window_norm) and not s.in_C_N(s.window_norm - 1e-9 - 1e-9 * s.window_norm)


@settings(max_examples=40, deadline=None)
@given(small_paths, st.floats(0.34, 0.49), st.floats(0.34, 0.49))
def test_norm_monotone_in_alpha(w, a1, a2):
    lo, hi = sorted((a1, a2))
    assert rough_norm(w, lo).homogeneous <= rough_norm(w, hi).homogeneous * (1 + 1e-12) + 1e-12


def test_coarsening_above_limit_is_flagged():
    w = brownian_paths(np.random.default_rng(2), 1, 2 * EXACT_LIMIT, ell=1)[0]
    s = holder_stats(w, 0.4)
    assert s.coarsened
    exact_sub = holder_stats(w[::2], 0.4).full_norm
    assert s.full_norm == pytest.approx(exact_sub * (1 + 2**-0.4))


def test_straight_line_has_no_area():
    w = np.linspace(0, 1, 50)[:, None] * np.array([1.0, 2.0, -1.0])
    assert np.max(np.abs(levy_area(w)(0, 49))) < 1e-14


def test_circle_area_is_pi():
    K = 2000
    t = np.linspace(0, 2 * math.pi, K + 1)
    A = levy_area(np.column_stack([np.cos(t), np.sin(t)]))(0, K)
    assert A[0, 1] == pytest.approx(math.pi, abs=20.0 / K)
    assert A[1, 0] == -A[0, 1]


def test_area_is_antisymmetric():
    w = np.random.default_rng(3).normal(size=(100, 4)).cumsum(0)
    A = levy_area(w)(np.array([0, 10, 30]), np.array([50, 60, 99]))
    np.testing.assert_array_equal(A, -np.swapaxes(A, -1, -2))


def test_area_matches_definition():
    rng = np.random.default_rng(4)
    w = rng.normal(size=(40, 3)).cumsum(0)
    s, t = 5, 33
    ref = np.zeros((3, 3))
    for k in range(s, t):
        dw = w[k + 1] - w[k]
        ref += 0.5 * (np.outer(w[k] - w[s], dw) - np.outer(dw, w[k] - w[s]))
    np.testing.assert_allclose(levy_area(w)(s, t), ref, atol=1e-12)


def test_chen_identity_on_random_triples():
    rng = np.random.default_rng(5)
    w = rng.normal(size=(1001, 3)).cumsum(0)
    A = levy_area(w)
    for _ in range(100):
        s, u, t = np.sort(rng.choice(1001, size=3, replace=False))
        lhs = A(s, t)
        assert np.max(np.abs(lhs - chen_rhs(A, s, u, t))) <= 1e-12 * max(1.0, np.max(np.abs(lhs)))


def test_levy_area_needs_two_components():
    with pytest.raises(ValueError):
        levy_area(np.zeros((10, 1)))


def test_zero_path_rough_norm():
    assert rough_norm(np.zeros((20, 2))).homogeneous == 0.0


@pytest.mark.parametrize("c", [0.5, 3.0])
def test_rough_norm_is_homogeneous(c):
    w = np.random.default_rng(6).normal(size=(65, 2)).cumsum(0)
    a, b = rough_norm(w), rough_norm(c * w)
    assert b.path_level == pytest.approx(c * a.path_level)
    assert b.area_level == pytest.approx(c * a.area_level)
    assert b.homogeneous == pytest.approx(c * a.homogeneous)


def test_vectorised_norms_match_single():
    W = brownian_paths(np.random.default_rng(7), 5, 64)
    p, a, _ = rough_norms(W, 0.4)
    for i in range(5):
        r = rough_norm(W[i], 0.4)
        assert (r.path_level, r.area_level) == pytest.approx((p[i], a[i]))
    full, window, _ = holder_norms(W, 0.4, 4)
    assert np.all(window <= full)


def test_brownian_scaling_in_law():
    rng = np.random.default_rng(8)
    tau = 0.25
    short = brownian_paths(rng, 1000, 256, duration=tau)
    unit = brownian_paths(rng, 1000, 256, duration=1.0)
    a = np.maximum(*rough_norms(short, 0.4)[:2])
    b = math.sqrt(tau) * np.maximum(*rough_norms(unit, 0.4)[:2])
    assert ks_2samp(a, b).pvalue > 0.01


def test_gaussian_tail_slope():
    x = np.abs(np.random.default_rng(9).standard_normal(200_000))
    curve = tail_statistics(x, np.linspace(2.0, 3.5, 7))
    assert curve.slope == pytest.approx(-0.5, rel=0.2)
    assert curve.omitted.size == 0


def test_tail_of_constant_samples():
    curve = tail_statistics(np.full(2000, 1.5), [1.0, 1.5, 2.0, 3.0])
    np.testing.assert_array_equal(curve.omitted, [2.0, 3.0])
    np.testing.assert_allclose(curve.log_survival, [0.0, 0.0])


def test_tail_needs_enough_samples():
    with pytest.raises(ValueError):
        tail_statistics(np.ones(10), [0.5])


def test_rough_norm_tail_is_concave():
    W = brownian_paths(np.random.default_rng(10), 10_000, 64)
    norms = np.maximum(*rough_norms(W, 0.4)[:2])
    ks = np.linspace(*np.quantile(norms, [0.2, 0.995]), 12)
    curve = tail_statistics(norms, ks)
    # leading coefficient of a quadratic fit of log-survival in K
    assert np.polyfit(curve.thresholds, curve.log_survival, 2)[0] < 0
    assert curve.slope < 0
