"""Small-noise experiments: heat-kernel decay, tube probabilities, concentration,
tightness of Hölder norms and time reversal of bridges."""

from __future__ import annotations

import logging
import math
import time
import warnings

import numpy as np
from scipy.stats import ks_2samp

from ..control import Control, Path, integrate, read_path_csv
from ..models import VectorFieldModel, model_from_config
from ..rough import holder_norms
from ..sde import EmptyEnsembleError, SimConfig, estimate_heat_kernel, reverse_ensemble, sample_bridge
from ..srgeom import GeodesicOptions, minimize_energy, rate_function
from .config import ExperimentConfig, check_eps_grid, load_config
from .report import FAIL, INCONCLUSIVE, PASS, Estimate, ExperimentReport, Fit

log = logging.getLogger(__name__)

NONCOMPACT_NOTE = (
    "the state space is not compact; the small-noise limits are checked locally at the configured points"
)
UNIFORMITY_NOTE = "uniformity over pairs of points is not testable by sampling; only the configured pair is checked"


# --------------------------------------------------------------------------
# helpers


def _pt(v) -> list[float]:
    return [float(a) for a in np.asarray(v, float)]


def _base_notes(model: VectorFieldModel) -> list[str]:
    return [NONCOMPACT_NOTE] if model.oracles.get("compact") is False else []


def _geodesic_options(cfg: ExperimentConfig) -> GeodesicOptions:
    return GeodesicOptions(seed=cfg.seed, workers=cfg.workers, **cfg.geodesic)


def distance_between(model: VectorFieldModel, x, y, cfg: ExperimentConfig) -> tuple[float, str]:
    """d(x, y) from the model's closed form when available, else by optimisation."""
    oracle = model.oracles.get("distance")
    if oracle is not None:
        return float(oracle(x, y)), "oracle"
    res = minimize_energy(model, x, y, _geodesic_options(cfg))
    return res.distance_estimate, "minimize_energy"


def fit_limit(eps, values, stderr=None, form: str = "linear") -> tuple[np.ndarray, np.ndarray]:
    """Least-squares coefficients of ``values`` on the basis of ``form``.

    With ``stderr`` the rows are weighted by 1/stderr (zero or non-finite
    errors fall back to unit weights).  Returns (coefficients, residuals).
    """
    eps = np.asarray(eps, float)
    vals = np.asarray(values, float)
    cols = [np.ones_like(eps), eps]
    if form == "linear+eps_log_eps":
        cols.append(eps * np.log(eps))
    A = np.column_stack(cols)
    w = np.ones_like(eps)
    if stderr is not None:
        se = np.asarray(stderr, float)
        if np.all(np.isfinite(se)) and np.all(se > 0):
            w = 1.0 / se
    coef = np.linalg.lstsq(A * w[:, None], vals * w, rcond=None)[0]
    return coef, vals - A @ coef


def _batch_fraction(indicator: np.ndarray, num_batches: int) -> tuple[float, float]:
    """Mean of a 0/1 array and its batch-means standard error."""
    n = indicator.size
    nb = min(num_batches, n)
    if nb < 2:
        return float(indicator.mean()) if n else math.nan, math.nan
    means = np.array([b.mean() for b in np.array_split(indicator.astype(float), nb)])
    return float(indicator.mean()), float(means.std(ddof=1) / math.sqrt(nb))


def _unwrapped(model: VectorFieldModel, pts: np.ndarray) -> np.ndarray:
    steps = model.wrap_difference(np.diff(pts, axis=0))
    return np.vstack([pts[:1], pts[0] + np.cumsum(steps, axis=0)])


def resample_path(model: VectorFieldModel, gamma: Path, num: int) -> np.ndarray:
    """gamma linearly interpolated onto ``num`` uniform times of [0, 1]."""
    pts = _unwrapped(model, gamma.points)
    if gamma.grid_K == 0:
        return np.repeat(pts, num, axis=0)
    t = np.linspace(0.0, 1.0, num)
    return np.column_stack([np.interp(t, gamma.times, pts[:, j]) for j in range(pts.shape[1])])


def sup_distance(model: VectorFieldModel, paths: np.ndarray, gamma: Path) -> np.ndarray:
    """sup_t |omega_t - gamma_t| for each path of an (n, N+1, m) array."""
    g = resample_path(model, gamma, paths.shape[1])
    d = model.wrap_difference(paths - g[None])
    return np.sqrt(np.max(np.sum(d * d, axis=-1), axis=-1))


def _bridge(model, x, y, cfg: ExperimentConfig, experiment: str, eps: float, k: int):
    sim = SimConfig(eps, steps_N=cfg.steps_for(experiment), seed=cfg.eps_seed(k))
    return sample_bridge(
        model,
        x,
        y,
        sim,
        ball_radius=cfg.ball_radius(eps),
        max_proposals=cfg.samples_per_eps,
        target_count=cfg.target_count,
        workers=cfg.workers,
    )


def _report(experiment, model, x, y, eps_grid, cfg, estimates, verdict, tolerance, **kw) -> ExperimentReport:
    return ExperimentReport(
        experiment=experiment,
        model=model.name,
        x=_pt(x),
        y=_pt(y),
        eps_grid=[float(e) for e in eps_grid],
        estimates=estimates,
        seed=int(cfg.seed),
        verdict=verdict,
        tolerance=tolerance,
        **kw,
    )


def _ensemble_extra(ens) -> dict:
    return {
        "acceptance_rate": float(ens.acceptance_rate),
        "num_proposals": int(ens.num_proposals),
        "ball_radius": float(ens.ball_radius),
    }


# --------------------------------------------------------------------------
# heat-kernel decay


def run_leandre(model: VectorFieldModel, x, y, eps_grid, cfg: ExperimentConfig) -> ExperimentReport:
    """eps log p_eps(x, y) on the grid, extrapolated to eps -> 0 and compared with -d^2/2.

    The extrapolation fits ``L + b eps + c eps log eps`` by weighted least
    squares; the eps log eps term absorbs the polynomial prefactor of the
    kernel, which a fit linear in eps cannot.  With ``importance_sampling``
    the kernel estimates steer the noise along a minimising control.
    """
    check_eps_grid(eps_grid)
    d, d_source = distance_between(model, x, y, cfg)
    shift = None
    if cfg.importance_sampling and d > 0.0:
        shift = minimize_energy(model, x, y, _geodesic_options(cfg)).h_star
    target = -0.5 * d * d
    tol = {"relative": cfg.tolerances["leandre"], "absolute_if_target_zero": cfg.tolerances["leandre_abs"]}
    estimates, dropped = [], []
    steps = cfg.steps_for("leandre")
    for k, eps in enumerate(eps_grid):
        sim = SimConfig(eps, steps_N=steps, seed=cfg.eps_seed(k))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            est = estimate_heat_kernel(
                model, x, y, sim, num_samples=cfg.samples_per_eps, num_batches=cfg.num_batches,
                workers=cfg.workers, shift=shift,
            )
        if est.value <= 0.0 or not math.isfinite(est.value):
            dropped.append(eps)
            continue
        estimates.append(
            Estimate(
                epsilon=eps,
                value=eps * math.log(est.value),
                stderr=eps * est.stderr / est.value,
                sample_size=est.num_samples,
                extra={"p_hat": est.value, "p_stderr": est.stderr, "bandwidth": est.bandwidth.tolist()},
            )
        )

    diagnostics = {"distance": d, "distance_source": d_source, "dropped_eps": dropped, "steps_N": steps,
                   "importance_sampling": shift is not None}
    if cfg.sanchez_calle:
        diagnostics["diagonal_scaled"] = _diagonal_scaling(model, x, cfg, steps)
    notes = _base_notes(model) + [UNIFORMITY_NOTE]
    if len(estimates) < 3:
        notes.append("fewer than 3 eps values survived underflow")
        return _report("leandre", model, x, y, eps_grid, cfg, estimates, INCONCLUSIVE, tol,
                       notes=notes, diagnostics=diagnostics)

    e = np.array([r.epsilon for r in estimates])
    v = np.array([r.value for r in estimates])
    se = np.array([r.stderr for r in estimates])
    form = "linear+eps_log_eps"
    coef, resid = fit_limit(e, v, se, form)
    L = float(coef[0])
    if abs(target) > 1e-12:
        err = abs(L - target) / abs(target)
        ok = err <= tol["relative"]
    else:
        err = abs(L - target)
        ok = err <= tol["absolute_if_target_zero"]
    lin, lin_resid = fit_limit(e, v, None, "linear")
    diagnostics["linear_fit"] = {"intercept": float(lin[0]), "slope": float(lin[1]),
                                 "residuals": lin_resid.tolist()}
    fit = Fit(float(coef[1]), L, target, float(err), form, coef.tolist(), resid.tolist())
    return _report("leandre", model, x, y, eps_grid, cfg, estimates, PASS if ok else FAIL, tol,
                   fit=fit, notes=notes, diagnostics=diagnostics)


def _diagonal_scaling(model, x, cfg: ExperimentConfig, steps: int) -> list[dict]:
    """p_eps(x, x) eps^m over eps in {1, 0.5, 0.2, 0.1}; bounded when the on-diagonal bound holds."""
    out = []
    for k, eps in enumerate((1.0, 0.5, 0.2, 0.1)):
        sim = SimConfig(eps, steps_N=steps, seed=cfg.eps_seed(1000 + k))
        est = estimate_heat_kernel(model, x, x, sim, num_samples=min(cfg.samples_per_eps, 20_000),
                                   num_batches=cfg.num_batches, workers=cfg.workers)
        out.append({"epsilon": eps, "p_hat": est.value, "scaled": est.value * eps**model.dim_m})
        log.info("diagonal p(x,x) eps^m at eps=%g: %.4g", eps, out[-1]["scaled"])
    return out


# --------------------------------------------------------------------------
# tube probabilities


def detour_path(model: VectorFieldModel, x0, amplitude: float, K: int = 256) -> Path:
    """Path driven by h(t) = (t, a sin 2 pi t, 0, ...).

    On the Heisenberg group from 0 it ends at (1, 0, 0) with energy
    1 + 2 pi^2 a^2, so J = pi^2 a^2 above the straight geodesic.
    """
    extra = [0.0] * (model.num_fields_ell - 2)
    h = Control.from_function(lambda t: [t, amplitude * math.sin(2.0 * math.pi * t)] + extra, K)
    return integrate(model, x0, h)


def resolve_gamma(model: VectorFieldModel, x, y, cfg: ExperimentConfig) -> Path:
    """The reference path of a tube experiment from ``cfg.gamma``."""
    spec = cfg.gamma
    if spec == "geodesic":
        return minimize_energy(model, x, y, _geodesic_options(cfg)).path
    if isinstance(spec, dict) and "detour" in spec:
        return detour_path(model, x, float(spec["detour"]), int(spec.get("K", 256)))
    if isinstance(spec, dict) and "csv" in spec:
        return read_path_csv(spec["csv"])
    raise ValueError(f"unrecognised gamma specification {spec!r}")


def run_tube(model, x, y, gamma: Path, radius: float, eps_grid, cfg: ExperimentConfig) -> ExperimentReport:
    """eps log P(sup |omega - gamma| < radius) for bridges, extrapolated linearly to eps -> 0.

    The limit is bracketed by the LDP bounds for the open and closed tube;
    ``-J(gamma)`` stands in for the tube infimum, so the check is the window
    ``[-J(gamma) - tol, tol]``.
    """
    check_eps_grid(eps_grid)
    d, d_source = distance_between(model, x, y, cfg)
    J = rate_function(model, x, y, gamma, d)
    tol = {"absolute": cfg.tolerances["tube"]}
    estimates, notes = [], _base_notes(model)
    for k, eps in enumerate(eps_grid):
        try:
            ens = _bridge(model, x, y, cfg, "tube", eps, k)
        except EmptyEnsembleError as exc:
            notes.append(f"empty ensemble at eps={eps}")
            return _report("tube", model, x, y, eps_grid, cfg, estimates, INCONCLUSIVE, tol, notes=notes,
                           diagnostics={"J_gamma": J, "radius": radius, "empty": exc.diagnostics})
        inside = sup_distance(model, ens.paths, gamma) < radius
        q, q_se = _batch_fraction(inside, cfg.num_batches)
        extra = _ensemble_extra(ens) | {"q_hat": q, "flagged": False}
        if q == 0.0:
            q = 3.0 / len(ens)
            extra.update(q_hat=q, flagged=True)
        estimates.append(Estimate(eps, eps * math.log(q), eps * q_se / q, len(ens), extra))

    e = np.array([r.epsilon for r in estimates])
    v = np.array([r.value for r in estimates])
    coef, resid = fit_limit(e, v, None, "linear")
    L = float(coef[0])
    lower, upper = -J - tol["absolute"], tol["absolute"]
    ok = lower <= L <= upper if math.isfinite(J) else False
    err = abs(L + J) / J if J > 0 and math.isfinite(J) else abs(L + J) if math.isfinite(J) else math.inf
    fit = Fit(float(coef[1]), L, -J, float(err), "linear", coef.tolist(), resid.tolist())
    diagnostics = {
        "J_gamma": J,
        "radius": radius,
        "distance": d,
        "distance_source": d_source,
        "sandwich": {"lower": lower, "upper": upper},
    }
    if len(estimates) < 2:
        return _report("tube", model, x, y, eps_grid, cfg, estimates, INCONCLUSIVE, tol, notes=notes,
                       diagnostics=diagnostics)
    return _report("tube", model, x, y, eps_grid, cfg, estimates, PASS if ok else FAIL, tol, fit=fit,
                   notes=notes, diagnostics=diagnostics)


# --------------------------------------------------------------------------
# concentration on the minimiser


def run_concentration(model, x, y, eps_grid, delta: float, cfg: ExperimentConfig) -> ExperimentReport:
    """Fraction of bridge paths within sup-distance ``delta`` of the unique minimiser."""
    check_eps_grid(eps_grid)
    floor = cfg.tolerances["concentration_floor"]
    tol = {"floor": floor, "monotone_se": 2.0}
    notes = _base_notes(model)
    geo = minimize_energy(model, x, y, _geodesic_options(cfg))
    diagnostics = {"delta": delta, "geodesic": geo.to_dict(), "unique": geo.unique}
    if not geo.unique:
        notes.append("no unique converged minimiser; concentration on a single path is not expected")
        return _report("concentration", model, x, y, eps_grid, cfg, [], INCONCLUSIVE, tol, notes=notes,
                       diagnostics=diagnostics)
    estimates = []
    for k, eps in enumerate(eps_grid):
        try:
            ens = _bridge(model, x, y, cfg, "concentration", eps, k)
        except EmptyEnsembleError as exc:
            notes.append(f"empty ensemble at eps={eps}")
            diagnostics["empty"] = exc.diagnostics
            return _report("concentration", model, x, y, eps_grid, cfg, estimates, INCONCLUSIVE, tol,
                           notes=notes, diagnostics=diagnostics)
        f, se = _batch_fraction(sup_distance(model, ens.paths, geo.path) < delta, cfg.num_batches)
        estimates.append(Estimate(eps, f, se, len(ens), _ensemble_extra(ens)))

    f = np.array([r.value for r in estimates])
    se = np.array([r.stderr for r in estimates])
    if not np.all(np.isfinite(se)):
        notes.append("too few accepted paths for a batched standard error")
        return _report("concentration", model, x, y, eps_grid, cfg, estimates, INCONCLUSIVE, tol,
                       notes=notes, diagnostics=diagnostics)
    slack = 2.0 * np.sqrt(se[1:] ** 2 + se[:-1] ** 2)
    monotone = bool(np.all(f[1:] >= f[:-1] - slack))
    diagnostics.update(monotone=monotone, final_fraction=float(f[-1]))
    ok = monotone and f[-1] >= floor
    return _report("concentration", model, x, y, eps_grid, cfg, estimates, PASS if ok else FAIL, tol,
                   notes=notes, diagnostics=diagnostics)


# --------------------------------------------------------------------------
# tightness of windowed Hölder norms


def run_tightness(model, x, y, eps_grid, alpha: float, window_n: int, K_threshold, cfg: ExperimentConfig):
    """eps log P(window Hölder norm > K) along the grid, plus monotonicity in K.

    ``K_threshold`` is a number or a list; the first entry drives the eps
    check.  A single threshold is paired with its double for the K check.
    Zero exceedances are replaced by the rule-of-three bound 3/n and flagged.
    """
    check_eps_grid(eps_grid)
    ks = [float(k) for k in np.atleast_1d(K_threshold)]
    k0 = ks[0]
    if len(ks) == 1:
        ks.append(2.0 * k0)
    ks = sorted(set(ks))
    tol = {"strict": True}
    notes = _base_notes(model)
    estimates, monotone_K = [], True
    for k, eps in enumerate(eps_grid):
        try:
            ens = _bridge(model, x, y, cfg, "tightness", eps, k)
        except EmptyEnsembleError as exc:
            notes.append(f"empty ensemble at eps={eps}")
            return _report("tightness", model, x, y, eps_grid, cfg, estimates, INCONCLUSIVE, tol,
                           notes=notes, diagnostics={"empty": exc.diagnostics})
        _, window, coarsened = holder_norms(ens.paths, alpha, window_n, model.periodic_dims)
        n = len(ens)
        per_k = {}
        for kk in ks:
            r, se = _batch_fraction(window > kk, cfg.num_batches)
            flagged = r == 0.0
            per_k[repr(kk)] = {"r_hat": 3.0 / n if flagged else r, "stderr": se, "flagged": bool(flagged)}
        seq = [per_k[repr(kk)]["r_hat"] for kk in ks]
        monotone_K &= all(b < a for a, b in zip(seq, seq[1:]))
        main = per_k[repr(k0)]
        se = main["stderr"] if math.isfinite(main["stderr"]) else math.nan
        estimates.append(
            Estimate(eps, eps * math.log(main["r_hat"]), eps * se / main["r_hat"], n,
                     _ensemble_extra(ens) | {"per_threshold": per_k, "flagged": main["flagged"],
                                             "median_window_norm": float(np.median(window)),
                                             "coarsened": bool(coarsened)})
        )
    v = [r.value for r in estimates]
    decreasing = all(b < a for a, b in zip(v, v[1:]))
    if any(r.extra["flagged"] for r in estimates):
        notes.append("some eps had zero exceedances; rule-of-three bounds used")
    diagnostics = {"alpha": alpha, "window_n": window_n, "thresholds": ks, "decreasing_in_eps": decreasing,
                   "monotone_in_K": bool(monotone_K)}
    ok = decreasing and monotone_K
    return _report("tightness", model, x, y, eps_grid, cfg, estimates, PASS if ok else FAIL, tol,
                   notes=notes, diagnostics=diagnostics)


# --------------------------------------------------------------------------
# time reversal


def adjoint_is_self(model: VectorFieldModel, x, y, tol: float = 1e-8) -> bool | None:
    """True when L is its own adjoint: drift free with divergence-free fields.

    Uses the model's oracle if present, otherwise a numerical divergence
    check along the segment from x to y.  None means undecidable (drift).
    """
    if "adjoint_is_self" in model.oracles:
        return bool(model.oracles["adjoint_is_self"])
    if model.has_drift:
        return None
    pts = np.linspace(np.asarray(x, float), np.asarray(y, float), 9)
    dF, _ = model.eval_jacobians(pts)
    div = np.trace(dF, axis1=-2, axis2=-1)
    return bool(np.all(np.abs(div) < tol))


def midpoint_pvalues(paths_a: np.ndarray, paths_b: np.ndarray) -> tuple[list[float], list[float]]:
    """Per-coordinate two-sample KS p-values at t = 1/2, raw and Bonferroni adjusted."""
    a = paths_a[:, (paths_a.shape[1] - 1) // 2]
    b = paths_b[:, (paths_b.shape[1] - 1) // 2]
    m = a.shape[1]
    raw = [float(ks_2samp(a[:, j], b[:, j]).pvalue) for j in range(m)]
    return raw, [min(1.0, m * p) for p in raw]


def run_reversal(model, x, y, eps: float, cfg: ExperimentConfig) -> ExperimentReport:
    """KS tests between the reversed x -> y bridge and the y -> x bridge at t = 1/2.

    ``cfg.eps_reverse`` runs the y -> x ensemble at a different eps (a
    negative control that should fail).
    """
    eps_grid = [float(eps)]
    crit = cfg.tolerances["reversal_pvalue"]
    tol = {"pvalue": crit, "correction": "bonferroni"}
    notes = _base_notes(model)
    self_adj = adjoint_is_self(model, x, y)
    if self_adj is not True:
        why = "model has a drift and no adjoint oracle" if self_adj is None else "fields are not divergence free"
        notes.append(f"reversal test skipped: {why}")
        return _report("reversal", model, x, y, eps_grid, cfg, [], INCONCLUSIVE, tol, notes=notes)
    eps_back = float(cfg.eps_reverse) if cfg.eps_reverse is not None else float(eps)
    try:
        fwd = _bridge(model, x, y, cfg, "reversal", float(eps), 0)
        back = _bridge(model, y, x, cfg, "reversal", eps_back, 1)
    except EmptyEnsembleError as exc:
        notes.append("empty ensemble")
        return _report("reversal", model, x, y, eps_grid, cfg, [], INCONCLUSIVE, tol, notes=notes,
                       diagnostics={"empty": exc.diagnostics})
    raw, adj = midpoint_pvalues(reverse_ensemble(fwd).paths, back.paths)
    ok = all(p > crit for p in adj)
    est = Estimate(float(eps), float(min(adj)), 0.0, min(len(fwd), len(back)),
                   {"pvalues": raw, "pvalues_adjusted": adj, "n_forward": len(fwd), "n_backward": len(back),
                    "eps_backward": eps_back})
    return _report("reversal", model, x, y, eps_grid, cfg, [est], PASS if ok else FAIL, tol, notes=notes,
                   diagnostics={"marginal_time": 0.5})


# --------------------------------------------------------------------------
# dispatch

EXPERIMENTS = ("leandre", "tube", "concentration", "tightness", "reversal")


def run_experiment(name: str, config) -> ExperimentReport:
    """Run a named experiment from a config (dict, JSON text, path or ExperimentConfig)."""
    cfg = load_config(config)
    model = model_from_config(cfg.model)
    x = np.asarray(cfg.x, float)
    y = np.asarray(cfg.y, float)
    t0 = time.perf_counter()
    if name == "leandre":
        rep = run_leandre(model, x, y, cfg.eps_grid, cfg)
    elif name == "tube":
        rep = run_tube(model, x, y, resolve_gamma(model, x, y, cfg), cfg.radius, cfg.eps_grid, cfg)
    elif name == "concentration":
        rep = run_concentration(model, x, y, cfg.eps_grid, cfg.delta, cfg)
    elif name == "tightness":
        rep = run_tightness(model, x, y, cfg.eps_grid, cfg.alpha, cfg.window_n, cfg.thresholds, cfg)
    elif name == "reversal":
        rep = run_reversal(model, x, y, cfg.eps_grid[0], cfg)
    else:
        raise ValueError(f"unknown experiment {name!r}; choose from {EXPERIMENTS}")
    rep.runtime_s = time.perf_counter() - t0
    return rep
