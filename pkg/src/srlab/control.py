"""Controlled ODE  gamma' = sum_i V_i(gamma) h'^i  and its discrete adjoint."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path as FsPath

import numpy as np

from .models import VectorFieldModel


class IntegrationDiverged(FloatingPointError):
    def __init__(self, step: int):
        super().__init__(f"integration produced a non-finite state at step {step}")
        self.step = step


@dataclass(frozen=True)
class Control:
    """Piecewise-linear H^1_0 control sampled at t_k = k / K."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] < 2:
            raise ValueError(f"control values must have shape (K+1, ell), got {v.shape}")
        if not np.allclose(v[0], 0.0, atol=0.0):
            raise ValueError("control must start at 0")
        if not np.all(np.isfinite(v)):
            raise ValueError("control values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def grid_K(self) -> int:
        return self.values.shape[0] - 1

    @property
    def ell(self) -> int:
        return self.values.shape[1]

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=0)

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.grid_K + 1)

    @classmethod
    def from_increments(cls, inc) -> Control:
        inc = np.asarray(inc, dtype=float)
        return cls(np.vstack([np.zeros((1, inc.shape[1])), np.cumsum(inc, axis=0)]))

    @classmethod
    def from_function(cls, fn, K: int) -> Control:
        """Sample ``fn(t) -> R^ell`` on the grid; ``fn(0)`` is subtracted."""
        t = np.linspace(0.0, 1.0, K + 1)
        vals = np.array([np.atleast_1d(fn(tk)) for tk in t], dtype=float)
        return cls(vals - vals[0])

    @classmethod
    def zeros(cls, K: int, ell: int) -> Control:
        return cls(np.zeros((K + 1, ell)))


@dataclass(frozen=True)
class Path:
    """Discrete trajectory on the uniform grid t_k = k / K."""

    points: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float)
        if p.ndim != 2 or p.shape[0] < 1:
            raise ValueError(f"path points must have shape (K+1, m), got {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("path contains non-finite entries")
        object.__setattr__(self, "points", p)

    @property
    def grid_K(self) -> int:
        return self.points.shape[0] - 1

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.grid_K + 1)

    @property
    def start(self) -> np.ndarray:
        return self.points[0]

    @property
    def end(self) -> np.ndarray:
        return self.points[-1]

    def reversed(self) -> Path:
        return Path(self.points[::-1].copy())


def h1_norm_sq(h: Control) -> float:
    """||h||^2 = K * sum_k |h_{k+1} - h_k|^2 for the piecewise-linear control."""
    inc = h.increments
    return float(h.grid_K * np.sum(inc * inc))


def _step_rhs(model, s, u, drift_scale):
    f = u @ model.eval_fields(s)
    if drift_scale:
        f = f + drift_scale * model.eval_drift(s)
    return f


def integrate(
    model: VectorFieldModel,
    x0,
    h: Control,
    include_drift: bool = False,
    drift_scale: float = 1.0,
    substeps: int = 1,
) -> Path:
    """RK4 integration with the control slope frozen on each grid interval.

    ``substeps`` RK4 steps are taken per control interval; the returned path
    lives on the control grid.
    """
    x = np.array(x0, dtype=float)
    if x.shape != (model.dim_m,) or not np.all(np.isfinite(x)):
        raise ValueError(f"x0 must be a finite point of R^{model.dim_m}")
    K = h.grid_K
    dt = 1.0 / (K * substeps)
    c = drift_scale if include_drift else 0.0
    slopes = h.increments * K
    out = np.empty((K + 1, model.dim_m))
    out[0] = x
    for k in range(K):
        u = slopes[k]
        for _ in range(substeps):
            k1 = _step_rhs(model, x, u, c)
            k2 = _step_rhs(model, x + 0.5 * dt * k1, u, c)
            k3 = _step_rhs(model, x + 0.5 * dt * k2, u, c)
            k4 = _step_rhs(model, x + dt * k3, u, c)
            x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise IntegrationDiverged(k)
        out[k + 1] = x
    return Path(out)


def endpoint_gradient(
    model: VectorFieldModel,
    x0,
    h: Control,
    target,
    include_drift: bool = False,
    drift_scale: float = 1.0,
    return_value: bool = False,
):
    """Gradient of 0.5 |gamma^h_1 - target|^2 with respect to the control nodes.

    Computed by reverse-mode differentiation through the RK4 steps (the
    discrete adjoint).  Row 0 corresponds to the pinned node h_0 = 0 and is
    always zero.  Periodic coordinates of the endpoint gap are wrapped.
    """
    x = np.array(x0, dtype=float)
    K = h.grid_K
    dt = 1.0 / K
    c = drift_scale if include_drift else 0.0
    slopes = h.increments * K
    tape = []
    for k in range(K):
        u = slopes[k]
        s1 = x
        k1 = _step_rhs(model, s1, u, c)
        s2 = x + 0.5 * dt * k1
        k2 = _step_rhs(model, s2, u, c)
        s3 = x + 0.5 * dt * k2
        k3 = _step_rhs(model, s3, u, c)
        s4 = x + dt * k3
        k4 = _step_rhs(model, s4, u, c)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise IntegrationDiverged(k)
        tape.append((s1, s2, s3, s4))

    gap = model.wrap_difference(x - np.asarray(target, dtype=float))
    lam = gap.copy()
    grad_slopes = np.zeros_like(slopes)
    S_all = np.array(tape)  # (K, 4, m)
    F_all = model.eval_fields(S_all)  # (K, 4, ell, m)
    dF_all, dV_all = model.eval_jacobians(S_all)
    # stage Jacobians d f / d s, transposed for the reverse sweep
    JT_all = np.einsum("ki,ksiab->ksba", slopes, dF_all)
    if c:
        JT_all = JT_all + c * np.swapaxes(dV_all, -1, -2)
    for k in range(K - 1, -1, -1):
        F = F_all[k]
        JT = JT_all[k]
        kb4 = (dt / 6.0) * lam
        kb3 = (dt / 3.0) * lam
        kb2 = (dt / 3.0) * lam
        kb1 = (dt / 6.0) * lam
        xb = lam.copy()
        ub = np.zeros(slopes.shape[1])

        sb = JT[3] @ kb4
        ub += F[3] @ kb4
        xb += sb
        kb3 = kb3 + dt * sb

        sb = JT[2] @ kb3
        ub += F[2] @ kb3
        xb += sb
        kb2 = kb2 + 0.5 * dt * sb

        sb = JT[1] @ kb2
        ub += F[1] @ kb2
        xb += sb
        kb1 = kb1 + 0.5 * dt * sb

        sb = JT[0] @ kb1
        ub += F[0] @ kb1
        xb += sb

        grad_slopes[k] = ub
        lam = xb

    # slope_k = K (h_{k+1} - h_k)
    g_inc = grad_slopes * K
    grad = np.zeros_like(h.values)
    grad[1:] += g_inc
    grad[1:-1] -= g_inc[1:]
    if return_value:
        return grad, 0.5 * float(gap @ gap), Path(np.vstack([np.array([t[0] for t in tape]), x]))
    return grad


def write_csv(obj: Control | Path, path, prefix: str | None = None) -> None:
    """One row per grid time: ``t, h_1..h_ell`` or ``t, x_1..x_m``."""
    arr = obj.values if isinstance(obj, Control) else obj.points
    if prefix is None:
        prefix = "h" if isinstance(obj, Control) else "x"
    K = arr.shape[0] - 1
    t = np.linspace(0.0, 1.0, K + 1)
    with open(FsPath(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"{prefix}_{j + 1}" for j in range(arr.shape[1])])
        for tk, row in zip(t, arr):
            w.writerow([repr(float(tk))] + [repr(float(v)) for v in row])


def read_csv(path) -> tuple[str, np.ndarray]:
    """Return (column prefix, array without the time column)."""
    with open(FsPath(path), newline="") as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], rows[1:]
    arr = np.array([[float(v) for v in r[1:]] for r in data], dtype=float)
    prefix = header[1].split("_")[0] if len(header) > 1 else "x"
    return prefix, arr


def read_path_csv(path) -> Path:
    return Path(read_csv(path)[1])


def read_control_csv(path) -> Control:
    return Control(read_csv(path)[1])
