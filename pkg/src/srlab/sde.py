"""Simulation of the diffusion with generator eps*L and endpoint-conditioned bridges.

Trajectories are generated in fixed-size blocks.  Block ``b`` draws its
Gaussian increments from ``SeedSequence([seed, b])``, so trajectory ``i`` is a
pure function of ``(seed, i)`` whatever the number of worker threads.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path as FsPath

import numpy as np

from .control import Path, read_path_csv, write_csv
from .models import VectorFieldModel, ambient_distance

log = logging.getLogger(__name__)

BLOCK_SIZE = 1024


class SimulationDiverged(FloatingPointError):
    pass


class EmptyEnsembleError(RuntimeError):
    def __init__(self, message: str, diagnostics: dict):
        super().__init__(f"{message}: {diagnostics}")
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class SimConfig:
    epsilon: float
    steps_N: int = 64
    seed: int = 0
    scheme: str = "euler_heun"
    drift_on: bool = False

    def __post_init__(self):
        if not (0.0 < self.epsilon <= 1.0):
            raise ValueError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if self.steps_N < 16:
            raise ValueError(f"steps_N must be >= 16, got {self.steps_N}")
        if self.scheme != "euler_heun":
            raise ValueError(f"unknown scheme {self.scheme!r}")


def _block_normals(cfg: SimConfig, block: int, ell: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, block]))
    return rng.standard_normal((cfg.steps_N, BLOCK_SIZE, ell))


def _heun_steps(model: VectorFieldModel, X: np.ndarray, dW: np.ndarray, cfg: SimConfig, out=None):
    """Advance X (B, m) through the increments dW (n, B, ell); optionally record."""
    dt = 1.0 / cfg.steps_N
    drift = cfg.drift_on and model.has_drift
    for k in range(dW.shape[0]):
        w = dW[k][:, None, :]
        F = model.eval_fields(X)
        inc = np.matmul(w, F)[:, 0, :]
        if drift:
            a = (cfg.epsilon * dt) * model.eval_drift(X)
            Xp = X + inc + a
            inc2 = np.matmul(w, model.eval_fields(Xp))[:, 0, :]
            X = X + 0.5 * (inc + inc2) + 0.5 * (a + (cfg.epsilon * dt) * model.eval_drift(Xp))
        else:
            Xp = X + inc
            inc2 = np.matmul(w, model.eval_fields(Xp))[:, 0, :]
            X = X + 0.5 * (inc + inc2)
        if not np.all(np.isfinite(X)):
            raise SimulationDiverged(f"non-finite state at step {k}")
        if out is not None:
            out[k + 1] = X
    return X


def simulate_block(
    model: VectorFieldModel, x0, cfg: SimConfig, block: int, count: int = BLOCK_SIZE, steps: int | None = None
) -> np.ndarray:
    """Paths of trajectories ``block*BLOCK_SIZE .. +count``, shape (count, steps+1, m)."""
    steps = cfg.steps_N if steps is None else steps
    dW = _block_normals(cfg, block, model.num_fields_ell)[:steps, :count] * math.sqrt(cfg.epsilon / cfg.steps_N)
    out = np.empty((steps + 1, count, model.dim_m))
    X = np.broadcast_to(np.asarray(x0, float), (count, model.dim_m)).copy()
    out[0] = X
    _heun_steps(model, X, dW, cfg, out)
    return np.ascontiguousarray(out.transpose(1, 0, 2))


def _map(fn, items, workers: int):
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def simulate(model: VectorFieldModel, x0, cfg: SimConfig, index: int = 0) -> Path:
    """One Euler-Heun trajectory of dX = eps V dt + sqrt(eps) V_i(X) o dW^i on [0, 1]."""
    block, offset = divmod(index, BLOCK_SIZE)
    paths = simulate_block(model, x0, cfg, block, count=offset + 1)
    return Path(paths[offset])


def simulate_paths(model: VectorFieldModel, x0, cfg: SimConfig, n: int, workers: int = 1) -> np.ndarray:
    """Trajectories 0..n-1 as an array (n, N+1, m)."""
    nblocks = -(-n // BLOCK_SIZE)

    def run(b):
        return simulate_block(model, x0, cfg, b, count=min(BLOCK_SIZE, n - b * BLOCK_SIZE))

    return np.concatenate(_map(run, range(nblocks), workers), axis=0)


# --------------------------------------------------------------------------
# bridges


@dataclass
class BridgeEnsemble:
    x: np.ndarray
    y: np.ndarray
    epsilon: float
    paths: np.ndarray  # (n, N+1, m)
    acceptance_rate: float
    ball_radius: float
    num_proposals: int
    seed: int = 0
    steps_N: int = 0
    indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    model_name: str = ""

    def __len__(self) -> int:
        return self.paths.shape[0]

    def path(self, i: int) -> Path:
        return Path(self.paths[i])

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.paths.shape[1])

    def meta(self) -> dict:
        return {
            "model": self.model_name,
            "x": [float(v) for v in self.x],
            "y": [float(v) for v in self.y],
            "epsilon": float(self.epsilon),
            "seed": int(self.seed),
            "steps_N": int(self.steps_N),
            "ball_radius": float(self.ball_radius),
            "num_proposals": int(self.num_proposals),
            "num_paths": len(self),
            "acceptance_rate": float(self.acceptance_rate),
            "indices": [int(i) for i in self.indices],
        }

    def save(self, directory) -> None:
        d = FsPath(directory)
        d.mkdir(parents=True, exist_ok=True)
        for i in range(len(self)):
            write_csv(self.path(i), d / f"path_{i:06d}.csv")
        (d / "meta.json").write_text(json.dumps(self.meta(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory) -> BridgeEnsemble:
        d = FsPath(directory)
        meta = json.loads((d / "meta.json").read_text())
        files = sorted(d.glob("path_*.csv"))
        paths = np.array([read_path_csv(f).points for f in files])
        return cls(
            x=np.array(meta["x"]),
            y=np.array(meta["y"]),
            epsilon=meta["epsilon"],
            paths=paths,
            acceptance_rate=meta["acceptance_rate"],
            ball_radius=meta["ball_radius"],
            num_proposals=meta["num_proposals"],
            seed=meta["seed"],
            steps_N=meta["steps_N"],
            indices=np.array(meta["indices"], dtype=np.int64),
            model_name=meta.get("model", ""),
        )


def default_ball_radius(epsilon: float, coef: float = 0.5) -> float:
    return coef * math.sqrt(epsilon)


def sample_bridge(
    model: VectorFieldModel,
    x,
    y,
    cfg: SimConfig,
    ball_radius: float | None = None,
    max_proposals: int = 1_000_000,
    target_count: int | None = None,
    workers: int = 1,
) -> BridgeEnsemble:
    """Rejection sampler: keep trajectories from x whose endpoint falls in B(y, radius).

    Proposals are consumed in trajectory order, so the ensemble (and
    ``num_proposals``) does not depend on ``workers``.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if ball_radius is None:
        ball_radius = default_ball_radius(cfg.epsilon)
    if ball_radius <= 0:
        raise ValueError("ball_radius must be positive")
    target = target_count if target_count is not None else max_proposals
    nblocks = -(-max_proposals // BLOCK_SIZE)

    def run(b):
        count = min(BLOCK_SIZE, max_proposals - b * BLOCK_SIZE)
        P = simulate_block(model, x, cfg, b, count=count)
        ok = np.flatnonzero(ambient_distance(model, P[:, -1], y) <= ball_radius)
        return P[ok], ok + b * BLOCK_SIZE, count

    kept, idx, proposals = [], [], 0
    accepted = 0
    b = 0
    wave = max(1, workers)
    done = False
    while b < nblocks and not done:
        for paths, ids, count in _map(run, range(b, min(b + wave, nblocks)), workers):
            if done:
                break
            need = target - accepted
            if len(ids) >= need:
                paths, ids = paths[:need], ids[:need]
                proposals = int(ids[-1]) + 1 if need > 0 else proposals
                done = True
            else:
                proposals += count
            kept.append(paths)
            idx.append(ids)
            accepted += len(ids)
        b += wave

    diagnostics = {
        "epsilon": cfg.epsilon,
        "ball_radius": ball_radius,
        "num_proposals": proposals,
        "x": x.tolist(),
        "y": y.tolist(),
    }
    if accepted == 0:
        raise EmptyEnsembleError("no proposal reached the acceptance ball", diagnostics)
    paths = np.concatenate(kept, axis=0)
    return BridgeEnsemble(
        x=x,
        y=y,
        epsilon=cfg.epsilon,
        paths=paths,
        acceptance_rate=accepted / proposals,
        ball_radius=float(ball_radius),
        num_proposals=proposals,
        seed=cfg.seed,
        steps_N=cfg.steps_N,
        indices=np.concatenate(idx),
        model_name=model.name,
    )


def reverse_ensemble(ens: BridgeEnsemble) -> BridgeEnsemble:
    """Time-reverse every path and swap the endpoints."""
    if len(ens) == 0:
        raise ValueError("cannot reverse an empty ensemble")
    return replace(ens, x=ens.y.copy(), y=ens.x.copy(), paths=ens.paths[:, ::-1, :].copy())


# --------------------------------------------------------------------------
# heat kernel


@dataclass
class HeatKernelEstimate:
    value: float
    stderr: float
    bandwidth: np.ndarray
    num_samples: int
    num_batches: int
    conditional: bool

    def __float__(self) -> float:
        return self.value


def silverman_factor(n: int, d: int) -> float:
    return (4.0 / ((d + 2.0) * n)) ** (1.0 / (d + 4.0))


def silverman_bandwidth(samples: np.ndarray) -> np.ndarray:
    n, d = samples.shape
    return samples.std(axis=0, ddof=1) * silverman_factor(n, d)


def shift_increments(shift, steps_N: int) -> np.ndarray:
    """Increments (N, ell) of a control resampled on the simulation grid."""
    vals = np.asarray(getattr(shift, "values", shift), float)
    src = np.linspace(0.0, 1.0, vals.shape[0])
    dst = np.linspace(0.0, 1.0, steps_N + 1)
    return np.diff(np.column_stack([np.interp(dst, src, v) for v in vals.T]), axis=0)


def _penultimate_and_last(model, x0, cfg, n, workers, shift=None):
    """States after N-1 and N steps for trajectories 0..n-1.

    With ``shift`` (increments (N, ell)) the first N-1 noise increments are
    translated by the shift and the log likelihood ratio of the original law
    against the shifted one is returned as a third array; otherwise it is None.
    """
    nblocks = -(-n // BLOCK_SIZE)
    sd = math.sqrt(cfg.epsilon / cfg.steps_N)

    def run(b):
        count = min(BLOCK_SIZE, n - b * BLOCK_SIZE)
        Z = _block_normals(cfg, b, model.num_fields_ell)[:, :count]
        dW = Z * sd
        logw = None
        if shift is not None:
            dh = shift[:-1, None, :]
            dW[:-1] += dh
            logw = -np.einsum("kbi,kbi->b", Z[:-1], np.broadcast_to(dh, Z[:-1].shape)) / sd
            logw -= 0.5 * np.sum(dh * dh) / (sd * sd)
        X = np.broadcast_to(np.asarray(x0, float), (count, model.dim_m)).copy()
        Xm = _heun_steps(model, X, dW[:-1], cfg)
        Xn = _heun_steps(model, Xm, dW[-1:], cfg)
        return Xm, Xn, logw

    res = _map(run, range(nblocks), workers)
    logw = None if shift is None else np.concatenate([r[2] for r in res])
    return np.concatenate([r[0] for r in res]), np.concatenate([r[1] for r in res]), logw


def _last_step_moments(model: VectorFieldModel, X: np.ndarray, cfg: SimConfig):
    """Gaussian approximation of one Euler-Heun step from X: mean and covariance."""
    dt = 1.0 / cfg.steps_N
    var = cfg.epsilon * dt
    F = model.eval_fields(X)  # (n, ell, m)
    dF, _ = model.eval_jacobians(X)
    # Stratonovich correction E[(1/2) sum_ij DV_j V_i dW^i dW^j] = (var/2) sum_i DV_i V_i
    corr = 0.5 * var * np.einsum("niab,nib->na", dF, F)
    mean = X + corr
    if cfg.drift_on and model.has_drift:
        mean = mean + cfg.epsilon * dt * model.eval_drift(X)
    cov = var * np.einsum("nia,nib->nab", F, F)
    return mean, cov


def _kernel_weights(model, y, mean, chol, logdet, Xn, h, conditional):
    """Per-sample Gaussian kernel values at y and the scaled squared distances."""
    m = model.dim_m
    if conditional:
        r = model.wrap_difference(y - mean)
        sol = np.linalg.solve(chol, r[..., None])[..., 0]
        q = np.sum(sol * sol, axis=1)
    else:
        r = model.wrap_difference(y - Xn) / h
        q = np.sum(r * r, axis=1)
    return np.exp(-0.5 * q - 0.5 * logdet - 0.5 * m * math.log(2.0 * math.pi)), q


def estimate_heat_kernel(
    model: VectorFieldModel,
    x,
    y,
    cfg: SimConfig,
    bandwidth=None,
    num_samples: int = 100_000,
    conditional: bool = True,
    num_batches: int = 20,
    workers: int = 1,
    shift=None,
):
    """Gaussian kernel density estimate of p_eps(x, y) (Lebesgue reference measure).

    With ``conditional`` the final Euler-Heun step is integrated analytically:
    each sample contributes a Gaussian of covariance ``diag(h^2) + eps dt F^T F``
    centred at its one-step mean, instead of a kernel at its simulated endpoint.
    The bandwidth ``h`` defaults to Silverman's factor times sqrt(eps) in every
    coordinate (the diffusive length scale); ``bandwidth="sample"`` uses the
    per-coordinate sample standard deviation instead.

    ``y`` may be a single point or an array of points (k, m); in the latter
    case one simulation is shared and a list of estimates is returned.

    ``shift`` (a Control, or its values on a uniform grid) turns on importance
    sampling: the noise is translated along the control, which steers samples
    towards far-away targets, and each kernel value is reweighted by the
    Girsanov likelihood ratio.  Only the conditional estimator supports it.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    dh = None
    if shift is not None:
        if not conditional:
            raise ValueError("importance sampling needs the conditional estimator")
        dh = shift_increments(shift, cfg.steps_N)
        if dh.shape[1] != model.num_fields_ell:
            raise ValueError(f"shift has {dh.shape[1]} components, model has {model.num_fields_ell} fields")
    Xm, Xn, logw = _penultimate_and_last(model, x, cfg, num_samples, workers, dh)
    if bandwidth is None:
        h = np.full(model.dim_m, silverman_factor(num_samples, model.dim_m) * math.sqrt(cfg.epsilon))
    elif isinstance(bandwidth, str) and bandwidth == "sample":
        h = silverman_bandwidth(model.wrap_difference(Xn - x))
    else:
        h = np.broadcast_to(np.asarray(bandwidth, float), (model.dim_m,)).copy()
    if np.any(h <= 0):
        raise ValueError(f"bandwidth must be positive, got {h}")
    mean = chol = None
    if conditional:
        mean, cov = _last_step_moments(model, Xm, cfg)
        chol = np.linalg.cholesky(cov + np.diag(h * h))
        logdet = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2)), axis=1)
    else:
        logdet = np.full(num_samples, 2.0 * np.sum(np.log(h)))

    out = []
    for yk in np.atleast_2d(y):
        k, q = _kernel_weights(model, yk, mean, chol, logdet, Xn, h, conditional)
        if logw is not None:
            k = k * np.exp(logw)
        if np.all(q > 64.0):
            warnings.warn("heat kernel estimate underflow: every sample is beyond 8 bandwidths", RuntimeWarning,
                          stacklevel=2)
            out.append(HeatKernelEstimate(0.0, 0.0, h, num_samples, num_batches, conditional))
            continue
        means = np.array([b.mean() for b in np.array_split(k, num_batches)])
        stderr = float(means.std(ddof=1) / math.sqrt(num_batches))
        out.append(HeatKernelEstimate(float(k.mean()), stderr, h, num_samples, num_batches, conditional))
    return out if y.ndim == 2 else out[0]
