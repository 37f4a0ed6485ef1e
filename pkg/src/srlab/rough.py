"""Hölder norms, discrete Lévy area and the homogeneous rough-path norm.

All paths live on the uniform grid t_k = k/K of [0, 1].  Norms are exact
suprema over grid pairs up to ``EXACT_LIMIT`` intervals; longer paths are
subsampled with stride 2^j and the result is inflated by (1 + 2^-alpha) and
flagged as ``coarsened``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .control import Path

log = logging.getLogger(__name__)

EXACT_LIMIT = 4096


@dataclass(frozen=True)
class HolderStats:
    alpha: float
    full_norm: float
    window_norm: float
    window_n: int
    coarsened: bool = False

    def in_C_N(self, K: float) -> bool:
        """Membership in {sup_{0 < t-s <= 1/n} |w_t - w_s| / |t-s|^alpha <= K}."""
        return self.window_norm <= K


@dataclass(frozen=True)
class RoughNorm:
    path_level: float
    area_level: float
    homogeneous: float
    coarsened: bool = False


def _as_array(path) -> np.ndarray:
    arr = path.points if isinstance(path, Path) else np.asarray(path, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    return arr


def _check_alpha(alpha: float) -> None:
    if not (1.0 / 3.0 < alpha < 0.5):
        log.warning("alpha=%.3f lies outside (1/3, 1/2)", alpha)


def _coarsen(arr: np.ndarray):
    """Subsample along the time axis (-2) so that at most EXACT_LIMIT intervals remain."""
    K = arr.shape[-2] - 1
    stride = 1
    while K // stride > EXACT_LIMIT:
        stride *= 2
    if stride == 1:
        return arr, 1.0 / K, False
    return arr[..., ::stride, :], stride / K, True


def _wrap(diff, periodic_dims):
    if periodic_dims:
        diff = diff.copy()
        for k in periodic_dims:
            diff[..., k] -= 2.0 * np.pi * np.round(diff[..., k] / (2.0 * np.pi))
    return diff


def holder_norms(paths, alpha: float, window_n: int = 1, periodic_dims=()):
    """Vectorised Hölder sups for paths of shape (..., K+1, d).

    Returns ``(full, window, coarsened)``; ``window`` restricts to t - s <= 1/window_n.
    """
    arr = np.asarray(paths, dtype=float)
    batch = arr.shape[:-2]
    full = np.zeros(batch)
    window = np.zeros(batch)
    if arr.shape[-2] < 2:
        return full, window, False
    arr, dt, coarsened = _coarsen(arr)
    K = arr.shape[-2] - 1
    max_lag_window = int(np.floor(K / window_n + 1e-9))
    for lag in range(1, K + 1):
        d = _wrap(arr[..., lag:, :] - arr[..., :-lag, :], periodic_dims)
        r = np.sqrt(np.max(np.sum(d * d, axis=-1), axis=-1)) / (lag * dt) ** alpha
        full = np.maximum(full, r)
        if lag <= max_lag_window:
            window = np.maximum(window, r)
    if coarsened:
        fac = 1.0 + 2.0**-alpha
        full, window = full * fac, window * fac
    return full, window, coarsened


def holder_stats(path, alpha: float = 0.4, window_n: int = 1, periodic_dims=()) -> HolderStats:
    """Exact alpha-Hölder sup of a path over all grid pairs and over short windows."""
    _check_alpha(alpha)
    arr = _as_array(path)
    full, window, coarsened = holder_norms(arr, alpha, window_n, periodic_dims)
    return HolderStats(alpha, float(full), float(window), window_n, coarsened)


class LevyArea:
    """Discrete Lévy area of a piecewise-linear R^ell path.

    ``A[s, t]^{ij} = 1/2 sum_{s <= k < t} [(w^i_k - w^i_s) dw^j_k - (w^j_k - w^j_s) dw^i_k]``
    for grid indices s <= t, evaluated through prefix sums.
    """

    def __init__(self, w):
        w = np.asarray(w, dtype=float)
        if w.ndim != 2 or w.shape[1] < 2:
            raise ValueError("Levy area needs an (K+1, ell) path with ell >= 2")
        self.w = w
        dw = np.diff(w, axis=0)
        prod = w[:-1, :, None] * dw[:, None, :]
        self._S = np.concatenate([np.zeros((1,) + prod.shape[1:]), np.cumsum(prod, axis=0)])

    @property
    def grid_K(self) -> int:
        return self.w.shape[0] - 1

    def __call__(self, s, t) -> np.ndarray:
        s = np.asarray(s)
        t = np.asarray(t)
        ws, wt = self.w[s], self.w[t]
        P = self._S[t] - self._S[s] - ws[..., :, None] * (wt - ws)[..., None, :]
        return 0.5 * (P - np.swapaxes(P, -1, -2))

    def increment(self, s, t) -> np.ndarray:
        return self.w[np.asarray(t)] - self.w[np.asarray(s)]


def levy_area(w) -> LevyArea:
    return LevyArea(_as_array(w))


def _area_level(arr: np.ndarray, dt: float, alpha: float) -> np.ndarray:
    """sup_{s<t} |A_{s,t}|^{1/2} / |t-s|^alpha for paths (..., K+1, ell)."""
    K = arr.shape[-2] - 1
    ell = arr.shape[-1]
    dw = np.diff(arr, axis=-2)
    out = np.zeros(arr.shape[:-2])
    pairs = [(i, j) for i in range(ell) for j in range(i + 1, ell)]
    # prefix sums of w^i_k dw^j_k for each ordered pair needed
    S = {}
    for i, j in pairs:
        for a, b in ((i, j), (j, i)):
            c = np.cumsum(arr[..., :-1, a] * dw[..., b], axis=-1)
            S[a, b] = np.concatenate([np.zeros(c.shape[:-1] + (1,)), c], axis=-1)
    for lag in range(1, K + 1):
        sq = 0.0
        for i, j in pairs:
            ws_i, ws_j = arr[..., :-lag, i], arr[..., :-lag, j]
            dj = arr[..., lag:, j] - ws_j
            di = arr[..., lag:, i] - ws_i
            pij = S[i, j][..., lag:] - S[i, j][..., :-lag] - ws_i * dj
            pji = S[j, i][..., lag:] - S[j, i][..., :-lag] - ws_j * di
            a = 0.5 * (pij - pji)
            sq = sq + a * a
        r = np.sqrt(np.sqrt(np.max(sq, axis=-1))) / (lag * dt) ** alpha
        out = np.maximum(out, r)
    return out


def rough_norms(paths, alpha: float = 0.4):
    """Vectorised rough norms of paths (..., K+1, ell): (path_level, area_level, coarsened)."""
    arr = np.asarray(paths, dtype=float)
    path_level, _, coarsened = holder_norms(arr, alpha, 1)
    arr_c, dt, _ = _coarsen(arr)
    if arr.shape[-1] >= 2 and arr_c.shape[-2] > 1:
        area = _area_level(arr_c, dt, alpha)
        if coarsened:
            area = area * (1.0 + 2.0**-alpha)
    else:
        area = np.zeros(arr.shape[:-2])
    return path_level, area, coarsened


def rough_norm(w, alpha: float = 0.4) -> RoughNorm:
    """Homogeneous norm max(path Hölder norm, sqrt-area Hölder norm)."""
    _check_alpha(alpha)
    arr = _as_array(w)
    p, a, coarsened = rough_norms(arr, alpha)
    p, a = float(p), float(a)
    return RoughNorm(p, a, max(p, a), coarsened)


@dataclass(frozen=True)
class TailCurve:
    thresholds: np.ndarray
    log_survival: np.ndarray
    omitted: np.ndarray
    slope: float
    intercept: float


def tail_statistics(samples, thresholds, min_exceedances: int = 5, min_samples: int = 1000) -> TailCurve:
    """Empirical log P(X >= K) and its least-squares slope against K^2.

    Thresholds with fewer than ``min_exceedances`` samples at or above them are
    omitted.  The slope is NaN when fewer than two points survive.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < min_samples:
        raise ValueError(f"need at least {min_samples} samples, got {x.size}")
    th = np.asarray(thresholds, dtype=float)
    counts = np.array([(x >= k).sum() for k in th])
    keep = counts >= min_exceedances
    ks = th[keep]
    logs = np.log(counts[keep] / x.size)
    if ks.size >= 2:
        slope, intercept = np.polyfit(ks * ks, logs, 1)
    else:
        slope = intercept = float("nan")
    return TailCurve(ks, logs, th[~keep], float(slope), float(intercept))


def brownian_paths(rng: np.random.Generator, n: int, K: int, ell: int = 2, duration: float = 1.0) -> np.ndarray:
    """n Brownian paths of shape (n, K+1, ell) sampled on [0, duration]."""
    inc = rng.standard_normal((n, K, ell)) * np.sqrt(duration / K)
    out = np.zeros((n, K + 1, ell))
    np.cumsum(inc, axis=1, out=out[:, 1:])
    return out
