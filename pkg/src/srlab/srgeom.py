"""Sub-Riemannian distance, minimal-energy paths, path energy and the rate function.

The distance is computed by direct optimisation over piecewise-linear
controls: a penalty method drives the endpoint onto the target while the H^1
energy is minimised, from several random low-frequency starting controls.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .control import Control, IntegrationDiverged, Path, endpoint_gradient, h1_norm_sq, integrate
from .models import VectorFieldModel, ambient_distance

log = logging.getLogger(__name__)


@dataclass
class GeodesicOptions:
    restarts: int = 8
    grid_K: int = 64
    penalty_exponents: tuple[int, ...] = (1, 2, 3, 4, 5, 6)
    tol_end: float = 1e-3
    seed: int = 0
    max_iter_per_stage: int = 400
    fourier_modes: int = 3
    workers: int = 1
    # relative energy window inside which distinct minimisers are recorded
    multiplicity_rtol: float = 5e-3
    multiplicity_sep: float = 5e-2


@dataclass
class GeodesicResult:
    h_star: Control
    path: Path
    energy: float
    distance_estimate: float
    endpoint_gap: float
    restarts_used: int
    converged: bool
    alternatives: list[Path] = field(default_factory=list)

    @property
    def unique(self) -> bool:
        return self.converged and not self.alternatives

    def to_dict(self) -> dict:
        return {
            "energy": self.energy,
            "distance_estimate": self.distance_estimate,
            "endpoint_gap": self.endpoint_gap,
            "restarts_used": self.restarts_used,
            "converged": self.converged,
            "num_minimizers": 1 + len(self.alternatives),
            "grid_K": self.h_star.grid_K,
            "start": self.path.start.tolist(),
            "end": self.path.end.tolist(),
        }


def _initial_control(rng: np.random.Generator, K: int, ell: int, scale: float, modes: int) -> np.ndarray:
    t = np.linspace(0.0, 1.0, K + 1)
    vals = np.zeros((K + 1, ell))
    for k in range(1, modes + 1):
        basis = np.sin((k - 0.5) * np.pi * t)
        vals += np.outer(basis, rng.normal(0.0, scale / k, size=ell))
    return vals


def constant_speed(h: Control) -> Control:
    """Reparametrise h by arc length so that |h'| is (nearly) constant."""
    inc = h.increments
    seg = np.linalg.norm(inc, axis=1)
    total = seg.sum()
    if total == 0.0:
        return h
    s = np.concatenate([[0.0], np.cumsum(seg)]) / total
    # drop zero-length segments so that s is strictly increasing
    keep = np.concatenate([[True], seg > 0])
    s, vals = s[keep], h.values[keep]
    grid = np.linspace(0.0, 1.0, h.grid_K + 1)
    new = np.column_stack([np.interp(grid, s, vals[:, j]) for j in range(h.ell)])
    new[0] = 0.0
    return Control(new)


def _length(h: Control) -> float:
    return float(np.linalg.norm(h.increments, axis=1).sum())


def _optimise_restart(model, x, y, opts: GeodesicOptions, index: int):
    ss = np.random.SeedSequence([opts.seed, index])
    rng = np.random.default_rng(ss)
    K, ell = opts.grid_K, model.num_fields_ell
    scale = max(ambient_distance(model, x, y), 1e-3)
    # optimise in scaled increments w = sqrt(K) (h_{k+1} - h_k): energy = |w|^2 / 2
    sqK = math.sqrt(K)
    w = (np.diff(_initial_control(rng, K, ell, scale, opts.fourier_modes), axis=0) * sqK).ravel()

    def objective(flat, mu):
        h = Control.from_increments(flat.reshape(K, ell) / sqK)
        g_end, val_end, _ = endpoint_gradient(model, x, h, y, return_value=True)
        # chain rule from nodes to increments: dJ/dDelta_k = sum_{j>k} dJ/dh_j
        g_inc = np.cumsum(g_end[:0:-1], axis=0)[::-1]
        val = 0.5 * float(flat @ flat) + mu * val_end
        return val, flat + mu * g_inc.ravel() / sqK

    try:
        for j in opts.penalty_exponents:
            # penalty measured in units of the ambient gap |y - x|
            mu = 10.0**j / scale**2
            res = minimize(
                objective,
                w,
                args=(mu,),
                jac=True,
                method="L-BFGS-B",
                options={"maxiter": opts.max_iter_per_stage, "ftol": 1e-12, "gtol": 1e-8},
            )
            w = res.x
    except (IntegrationDiverged, ValueError, FloatingPointError) as exc:
        log.info("restart %d discarded: %s", index, exc)
        return None
    h = Control.from_increments(w.reshape(K, ell) / sqK)
    candidates = [constant_speed(h), h]
    best = None
    for cand in candidates:
        try:
            path = integrate(model, x, cand)
        except IntegrationDiverged:
            continue
        gap = ambient_distance(model, path.end, y)
        rec = (cand, path, gap)
        if best is None or (gap <= opts.tol_end and best[2] > opts.tol_end):
            best = rec
        if gap <= opts.tol_end:
            break
    return best


def minimize_energy(model: VectorFieldModel, x, y, opts: GeodesicOptions | None = None) -> GeodesicResult:
    """Multi-start penalty minimisation of ||h||^2 subject to gamma^h_1 = y.

    The returned control is reparametrised to constant speed, so that
    ``distance_estimate**2`` matches ``energy`` up to discretisation.
    """
    opts = opts or GeodesicOptions()
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    K, ell = opts.grid_K, model.num_fields_ell
    if ambient_distance(model, x, y) == 0.0:
        h = Control.zeros(K, ell)
        return GeodesicResult(h, integrate(model, x, h), 0.0, 0.0, 0.0, 0, True)

    indices = range(opts.restarts)
    if opts.workers > 1:
        with ThreadPoolExecutor(opts.workers) as ex:
            runs = list(ex.map(lambda i: _optimise_restart(model, x, y, opts, i), indices))
    else:
        runs = [_optimise_restart(model, x, y, opts, i) for i in indices]

    results = []
    for i, run in enumerate(runs):
        if run is None:
            continue
        h, path, gap = run
        results.append((gap > opts.tol_end, h1_norm_sq(h), i, h, path, gap))
    if not results:
        raise IntegrationDiverged(-1)
    # converged restarts first, then lowest energy; index breaks ties
    results.sort(key=lambda r: (r[0], r[1], r[2]))
    _, energy, _, h, path, gap = results[0]
    converged = gap <= opts.tol_end

    alternatives = []
    if converged:
        scale = max(np.max(np.abs(path.points - path.points[0])), 1e-12)
        kept = [path]
        for bad, e, _, _, p, _ in results[1:]:
            if bad or e > energy * (1.0 + opts.multiplicity_rtol):
                continue
            seps = [np.max(ambient_distance(model, p.points, q.points)) for q in kept]
            if min(seps) > opts.multiplicity_sep * scale:
                kept.append(p)
                alternatives.append(p)

    return GeodesicResult(
        h_star=h,
        path=path,
        energy=energy,
        distance_estimate=_length(h),
        endpoint_gap=float(gap),
        restarts_used=len(results),
        converged=bool(converged),
        alternatives=alternatives,
    )


@dataclass
class EnergyOptions:
    horizontality_tol: float = 1e-2


def fit_controls(model: VectorFieldModel, gamma: Path):
    """Least-norm slopes reproducing each step of gamma, and per-step residuals.

    Fields are evaluated at the step midpoint.
    """
    P = gamma.points
    K = gamma.grid_K
    if K == 0:
        return np.zeros((0, model.num_fields_ell)), np.zeros(0), np.zeros(0)
    d = model.wrap_difference(np.diff(P, axis=0))
    vel = d * K
    mid = P[:-1] + 0.5 * d
    F = model.eval_fields(mid)  # (K, ell, m)
    A = np.swapaxes(F, -1, -2)  # (K, m, ell)
    slopes = np.empty((K, model.num_fields_ell))
    for k in range(K):
        slopes[k] = np.linalg.lstsq(A[k], vel[k], rcond=None)[0]
    resid = np.linalg.norm(np.einsum("kml,kl->km", A, slopes) - vel, axis=1)
    speed = np.linalg.norm(vel, axis=1)
    return slopes, resid, speed


def path_energy(model: VectorFieldModel, gamma: Path, opts: EnergyOptions | None = None) -> float:
    """Energy inf{||h||^2 : gamma^h = gamma}; ``math.inf`` for non-horizontal paths."""
    opts = opts or EnergyOptions()
    slopes, resid, speed = fit_controls(model, gamma)
    if slopes.size == 0:
        return 0.0
    if np.any(resid > opts.horizontality_tol * speed + 1e-12):
        return math.inf
    return float(np.sum(slopes * slopes) / gamma.grid_K)


def rate_function(
    model: VectorFieldModel, x, y, gamma: Path, dist_xy: float, opts: EnergyOptions | None = None
) -> float:
    """J(gamma) = (energy(gamma) - d(x, y)^2) / 2 with J = inf off horizontal paths."""
    gap_start = ambient_distance(model, gamma.start, x)
    gap_end = ambient_distance(model, gamma.end, y)
    if gap_start > 1e-6 or gap_end > 1e-3:
        log.warning("path endpoints miss (x, y) by %.2e / %.2e", gap_start, gap_end)
    energy = path_energy(model, gamma, opts)
    if math.isinf(energy):
        return math.inf
    J = 0.5 * (energy - dist_xy * dist_xy)
    if J < -1e-6:
        log.warning("negative rate %.3e: supplied distance overestimates d(x, y)", J)
    return max(J, 0.0)
