"""Vector-field models for hypoelliptic diffusions.

A model bundles ``ell`` driving fields ``V_1..V_ell`` and a drift ``V`` on a
chart of R^m.  Every evaluation routine is vectorised over leading axes:

* ``eval_fields(p)``    : (..., m) -> (..., ell, m)
* ``eval_drift(p)``     : (..., m) -> (..., m)
* ``eval_jacobians(p)`` : (..., m) -> ((..., ell, m, m), (..., m, m)),
  with ``DF[..., i, a, b] = d V_i^a / d x_b``.
"""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import brentq

TWO_PI = 2.0 * np.pi
FD_STEP = 1e-6


class ModelError(ValueError):
    """Raised for unknown model names or malformed custom models."""


@dataclass(frozen=True)
class VectorFieldModel:
    name: str
    dim_m: int
    num_fields_ell: int
    fields: Callable[[np.ndarray], np.ndarray]
    drift: Callable[[np.ndarray], np.ndarray] | None = None
    jacobians: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]] | None = None
    periodic_dims: tuple[int, ...] = ()
    oracles: dict[str, Any] = field(default_factory=dict)
    params: dict[str, Any] = field(default_factory=dict)

    def eval_fields(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return self.fields(p)

    def eval_drift(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if self.drift is None:
            return np.zeros_like(p)
        return self.drift(p)

    @property
    def has_drift(self) -> bool:
        return self.drift is not None

    def eval_jacobians(self, p) -> tuple[np.ndarray, np.ndarray]:
        p = np.asarray(p, dtype=float)
        if self.jacobians is not None:
            return self.jacobians(p)
        return _fd_jacobians(self, p)

    def wrap_difference(self, d) -> np.ndarray:
        """Reduce periodic coordinates of a difference vector to (-pi, pi]."""
        d = np.array(d, dtype=float, copy=True)
        for k in self.periodic_dims:
            d[..., k] = d[..., k] - TWO_PI * np.round(d[..., k] / TWO_PI)
        return d

    def describe(self) -> dict:
        return {"name": self.name, "params": dict(self.params)}


def _fd_jacobians(model: VectorFieldModel, p: np.ndarray):
    m = model.dim_m
    dF = np.empty(p.shape[:-1] + (model.num_fields_ell, m, m))
    dV = np.empty(p.shape[:-1] + (m, m))
    for b in range(m):
        e = np.zeros(m)
        e[b] = FD_STEP
        dF[..., b] = (model.fields(p + e) - model.fields(p - e)) / (2 * FD_STEP)
        dV[..., b] = (model.eval_drift(p + e) - model.eval_drift(p - e)) / (2 * FD_STEP)
    return dF, dV


def ambient_distance(model: VectorFieldModel, p, q) -> np.ndarray | float:
    """Euclidean distance in the chart, wrap-aware on periodic coordinates."""
    d = model.wrap_difference(np.asarray(q, dtype=float) - np.asarray(p, dtype=float))
    out = np.sqrt(np.sum(d * d, axis=-1))
    return float(out) if np.ndim(out) == 0 else out


def lie_bracket(model: VectorFieldModel, p, i: int, j: int) -> np.ndarray:
    """[V_i, V_j](p) = DV_j V_i - DV_i V_j."""
    F = model.eval_fields(p)
    dF, _ = model.eval_jacobians(p)
    vi, vj = F[..., i, :], F[..., j, :]
    return np.einsum("...ab,...b->...a", dF[..., j, :, :], vi) - np.einsum(
        "...ab,...b->...a", dF[..., i, :, :], vj
    )


def bracket_rank(model: VectorFieldModel, p, tol: float = 1e-8) -> int:
    """Rank of span{V_i} + span{[V_i, V_j]} at a single point."""
    p = np.asarray(p, dtype=float)
    vecs = list(model.eval_fields(p))
    ell = model.num_fields_ell
    for i in range(ell):
        for j in range(i + 1, ell):
            vecs.append(lie_bracket(model, p, i, j))
    return int(np.linalg.matrix_rank(np.array(vecs), tol=tol))


# --------------------------------------------------------------------------
# Heisenberg group


def _heis_fields(p):
    x, y = p[..., 0], p[..., 1]
    out = np.zeros(p.shape[:-1] + (2, 3))
    out[..., 0, 0] = 1.0
    out[..., 0, 2] = -0.5 * y
    out[..., 1, 1] = 1.0
    out[..., 1, 2] = 0.5 * x
    return out


def _heis_jacobians(p):
    dF = np.zeros(p.shape[:-1] + (2, 3, 3))
    dF[..., 0, 2, 1] = -0.5
    dF[..., 1, 2, 0] = 0.5
    return dF, np.zeros(p.shape[:-1] + (3, 3))


def heisenberg_multiply(p, q) -> np.ndarray:
    p, q = np.asarray(p, float), np.asarray(q, float)
    out = p + q
    out[..., 2] += 0.5 * (p[..., 0] * q[..., 1] - p[..., 1] * q[..., 0])
    return out


def heisenberg_inverse(p) -> np.ndarray:
    return -np.asarray(p, float)


def heisenberg_dilate(p, lam: float) -> np.ndarray:
    p = np.asarray(p, float)
    return np.array([lam * p[0], lam * p[1], lam * lam * p[2]])


def heisenberg_distance(p, q=None) -> float:
    """Exact Carnot-Caratheodory distance d(p, q) (d(0, p) when q is None).

    Geodesics from the origin project to circular arcs; with chord r and
    turning angle phi the swept area is r^2 (phi - sin phi) / (8 sin^2(phi/2)).
    """
    if q is not None:
        p = heisenberg_multiply(heisenberg_inverse(p), q)
    x, y, z = (float(c) for c in p)
    r = math.hypot(x, y)
    z = abs(z)
    if z == 0.0:
        return r
    # r^2 / z below 1e-15 is the vertical case to double precision
    if r * r <= 1e-15 * z:
        return 2.0 * math.sqrt(math.pi * z)
    target = z / (r * r)

    def area(phi):
        return (phi - math.sin(phi)) / (8.0 * math.sin(phi / 2.0) ** 2) - target

    hi = 2.0 * math.pi - 1e-12
    while area(hi) < 0:
        hi = 2.0 * math.pi - (2.0 * math.pi - hi) / 10.0
    phi = brentq(area, 1e-12, hi, xtol=1e-15, rtol=1e-15, maxiter=500)
    return r * phi / (2.0 * math.sin(phi / 2.0))


_HK_S = np.linspace(1e-9, 40.0, 8001)
_HK_RATIO = _HK_S / np.sinh(_HK_S)
_HK_COTH = _HK_S / np.tanh(_HK_S)


def heisenberg_heat_kernel(t: float, p, q=None) -> np.ndarray | float:
    """Heat kernel of (1/2)(V_1^2 + V_2^2) at time t, Lebesgue reference measure.

    Uses Levy's area formula:
    p_t(0, (x, y, z)) = 4/((2 pi)^2 t^2) int_0^inf s/sinh(s)
                        exp(-r^2 s coth(s) / (2t)) cos(2 s z / t) ds.
    """
    if q is not None:
        p = heisenberg_multiply(heisenberg_inverse(p), q)
    p = np.asarray(p, float)
    r2 = (p[..., 0] ** 2 + p[..., 1] ** 2)[..., None]
    z = p[..., 2][..., None]
    f = _HK_RATIO * np.exp(-r2 * _HK_COTH / (2.0 * t)) * np.cos(2.0 * _HK_S * z / t)
    val = 4.0 * trapezoid(f, _HK_S, axis=-1) / ((2.0 * np.pi) ** 2 * t * t)
    return float(val) if np.ndim(val) == 0 else val


def _make_heisenberg(params: dict) -> VectorFieldModel:
    return VectorFieldModel(
        name="heisenberg",
        dim_m=3,
        num_fields_ell=2,
        fields=_heis_fields,
        jacobians=_heis_jacobians,
        oracles={
            "distance": heisenberg_distance,
            "heat_kernel": heisenberg_heat_kernel,
            "adjoint_is_self": True,
            "compact": False,
        },
        params=dict(params),
    )


# --------------------------------------------------------------------------
# Hypoelliptic flat torus: V_1 = d/dx, V_2 = sin(x) d/dy


def _torus_fields(p):
    out = np.zeros(p.shape[:-1] + (2, 2))
    out[..., 0, 0] = 1.0
    out[..., 1, 1] = np.sin(p[..., 0])
    return out


def _torus_jacobians(p):
    dF = np.zeros(p.shape[:-1] + (2, 2, 2))
    dF[..., 1, 1, 0] = np.cos(p[..., 0])
    return dF, np.zeros(p.shape[:-1] + (2, 2))


def _make_torus(params: dict) -> VectorFieldModel:
    return VectorFieldModel(
        name="torus_hypo",
        dim_m=2,
        num_fields_ell=2,
        fields=_torus_fields,
        jacobians=_torus_jacobians,
        periodic_dims=(0, 1),
        # V_2 is divergence free (sin x d/dy), so L is self-adjoint for Lebesgue.
        oracles={"adjoint_is_self": True, "compact": True},
        params=dict(params),
    )


# --------------------------------------------------------------------------
# Custom models from expressions or callables

_ALLOWED_FUNCS = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "tanh": np.tanh,
    "sinh": np.sinh,
    "cosh": np.cosh,
    "abs": np.abs,
}
_ALLOWED_CONSTS = {"pi": np.pi, "e": np.e}
_ALLOWED_NODES = (
    ast.Expression,
    ast.Tuple,
    ast.BinOp,
    ast.UnaryOp,
    ast.Call,
    ast.Name,
    ast.Load,
    ast.Constant,
    ast.Add,
    ast.Sub,
    ast.Mult,
    ast.Div,
    ast.Pow,
    ast.USub,
    ast.UAdd,
)


def _compile_vector(src: str, label: str):
    try:
        tree = ast.parse(src.strip(), mode="eval")
    except SyntaxError as exc:
        raise ModelError(f"cannot parse {label}: {src!r}") from exc
    if not isinstance(tree.body, ast.Tuple):
        raise ModelError(f"{label} must be a tuple of components, got {src!r}")
    names = set()
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise ModelError(f"disallowed syntax {type(node).__name__} in {label}")
        if isinstance(node, ast.Call) and not (
            isinstance(node.func, ast.Name) and node.func.id in _ALLOWED_FUNCS
        ):
            raise ModelError(f"unknown function in {label}: {ast.unparse(node.func)}")
        if isinstance(node, ast.Name):
            names.add(node.id)
    for n in names:
        if n in _ALLOWED_FUNCS or n in _ALLOWED_CONSTS:
            continue
        if not (n.startswith("x") and n[1:].isdigit()):
            raise ModelError(f"unknown variable {n!r} in {label}")
    comps = [compile(ast.Expression(body=elt), label, "eval") for elt in tree.body.elts]
    max_var = max((int(n[1:]) for n in names if n.startswith("x") and n[1:].isdigit()), default=-1)
    return comps, max_var


def _parse_field_spec(spec: str):
    fields, drift = {}, None
    for chunk in spec.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        if "=" not in chunk:
            raise ModelError(f"expected NAME=(...) in custom model, got {chunk!r}")
        key, expr = (s.strip() for s in chunk.split("=", 1))
        if key == "V":
            drift = _compile_vector(expr, "drift V")
        elif key.startswith("V") and key[1:].isdigit():
            fields[int(key[1:])] = _compile_vector(expr, key)
        else:
            raise ModelError(f"unknown field name {key!r}")
    if not fields:
        raise ModelError("custom model needs at least one field V1=(...)")
    if sorted(fields) != list(range(1, len(fields) + 1)):
        raise ModelError(f"fields must be numbered V1..Vn, got {sorted(fields)}")
    return [fields[k] for k in sorted(fields)], drift


def _eval_components(comps, p):
    env = dict(_ALLOWED_FUNCS)
    env.update(_ALLOWED_CONSTS)
    for k in range(p.shape[-1]):
        env[f"x{k}"] = p[..., k]
    shape = p.shape[:-1]
    with np.errstate(all="ignore"):
        vals = [np.broadcast_to(np.asarray(eval(c, {"__builtins__": {}}, env), float), shape)
                for c in comps]
    return np.stack(vals, axis=-1)


def _make_custom(params: dict) -> VectorFieldModel:
    spec = params.get("fields")
    if spec is None:
        raise ModelError("custom model requires params['fields']")
    periodic = tuple(int(k) for k in params.get("periodic_dims", ()))
    if callable(spec) or (isinstance(spec, (list, tuple)) and spec and callable(spec[0])):
        return _custom_from_callables(spec, params, periodic)
    compiled, drift = _parse_field_spec(str(spec))
    dims = {len(c) for c, _ in compiled}
    if drift is not None:
        dims.add(len(drift[0]))
    if len(dims) != 1:
        raise ModelError(f"field dimensions disagree: {sorted(dims)}")
    m = dims.pop()
    max_var = max([mv for _, mv in compiled] + ([drift[1]] if drift else []))
    if max_var >= m:
        raise ModelError(f"variable x{max_var} out of range for dimension {m}")

    def fields(p):
        return np.stack([_eval_components(c, p) for c, _ in compiled], axis=-2)

    drift_fn = None
    if drift is not None:
        def drift_fn(p):
            return _eval_components(drift[0], p)

    model = VectorFieldModel(
        name="custom",
        dim_m=m,
        num_fields_ell=len(compiled),
        fields=fields,
        drift=drift_fn,
        periodic_dims=periodic,
        params={k: v for k, v in params.items() if isinstance(v, (str, int, float, list))},
    )
    probe = model.eval_fields(np.full(m, 0.5))
    if not np.all(np.isfinite(probe)):
        raise ModelError("custom fields are not finite at the probe point (0.5, ..., 0.5)")
    return model


def _custom_from_callables(spec, params, periodic):
    dim = params.get("dim_m")
    ell = params.get("num_fields_ell")
    if dim is None:
        raise ModelError("callable custom model requires params['dim_m']")
    if callable(spec):
        fields = spec
        if ell is None:
            ell = np.asarray(fields(np.zeros(dim))).shape[-2]
    else:
        fns = list(spec)
        ell = len(fns)

        def fields(p):
            return np.stack([np.broadcast_to(f(p), p.shape) for f in fns], axis=-2)

    return VectorFieldModel(
        name="custom",
        dim_m=int(dim),
        num_fields_ell=int(ell),
        fields=fields,
        drift=params.get("drift"),
        jacobians=params.get("jacobians"),
        periodic_dims=periodic,
        params={"dim_m": int(dim)},
    )


_FACTORIES = {
    "heisenberg": _make_heisenberg,
    "torus_hypo": _make_torus,
    "custom": _make_custom,
}


def make_model(name: str, params: dict | None = None, **kwargs) -> VectorFieldModel:
    """Build a catalog model.

    >>> make_model("heisenberg").eval_fields([0.0, 0.0, 0.0])[0]
    array([1., 0., 0.])
    """
    params = dict(params or {})
    params.update(kwargs)
    try:
        factory = _FACTORIES[name]
    except KeyError:
        raise ModelError(f"unknown model {name!r}; choose from {sorted(_FACTORIES)}") from None
    return factory(params)


def model_from_config(block: dict) -> VectorFieldModel:
    """Build from a ``{"name": ..., "params": {...}}`` JSON block."""
    if isinstance(block, str):
        return make_model(block)
    return make_model(block["name"], block.get("params") or {})
