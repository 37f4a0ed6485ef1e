"""Experiment reports and their on-disk form (report.json, curves.csv, plot.svg)."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

PASS, FAIL, INCONCLUSIVE = "pass", "fail", "inconclusive"
EXIT_CODES = {PASS: 0, FAIL: 2, INCONCLUSIVE: 3}


@dataclass
class Estimate:
    epsilon: float
    value: float
    stderr: float
    sample_size: int
    extra: dict = field(default_factory=dict)


@dataclass
class Fit:
    slope: float
    intercept: float
    target: float
    relative_error: float
    form: str = "linear"
    coefficients: list = field(default_factory=list)
    residuals: list = field(default_factory=list)

    def predict(self, eps: float) -> float:
        basis = _basis(self.form, eps)
        return float(sum(c * b for c, b in zip(self.coefficients, basis)))


def _basis(form: str, eps: float) -> list[float]:
    if form == "linear":
        return [1.0, eps]
    if form == "linear+eps_log_eps":
        return [1.0, eps, eps * math.log(eps)]
    raise ValueError(f"unknown fit form {form!r}")


@dataclass
class ExperimentReport:
    experiment: str
    model: str
    x: list
    y: list
    eps_grid: list
    estimates: list[Estimate]
    seed: int
    verdict: str
    tolerance: dict
    fit: Fit | None = None
    runtime_s: float = 0.0
    notes: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self, include_runtime: bool = True) -> dict:
        d = asdict(self)
        if not include_runtime:
            d.pop("runtime_s")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentReport:
        d = dict(d)
        d["estimates"] = [Estimate(**e) for e in d["estimates"]]
        d["fit"] = Fit(**d["fit"]) if d.get("fit") else None
        return cls(**d)

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.verdict]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "tolist"):
        return _jsonable(obj.tolist())
    if isinstance(obj, float) and not math.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    if isinstance(obj, bool) or obj is None or isinstance(obj, (int, float, str)):
        return obj
    return str(obj)


def dumps_report(report: ExperimentReport) -> str:
    """Deterministic JSON text of a report (wall-clock runtime excluded)."""
    return json.dumps(_jsonable(report.to_dict(include_runtime=False)), indent=2, sort_keys=True) + "\n"


def _revive(obj):
    if isinstance(obj, dict):
        return {k: _revive(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_revive(v) for v in obj]
    if obj in ("inf", "-inf", "nan"):
        return float(obj)
    return obj


def loads_report(text: str) -> ExperimentReport:
    d = _revive(json.loads(text))
    d.setdefault("runtime_s", 0.0)
    return ExperimentReport.from_dict(d)


def _fmt(v: float) -> str:
    return f"{v:.3f}"


def render_svg(report: ExperimentReport, width: int = 480, height: int = 320) -> str:
    """Scatter of the per-eps values, plus fit and target polylines when a fit exists."""
    pad = 40
    pts = [(e.epsilon, e.value) for e in report.estimates if math.isfinite(e.value)]
    xs = [p[0] for p in pts] or [0.0, 1.0]
    ys = [p[1] for p in pts] or [0.0, 1.0]
    xmin, xmax = 0.0, max(xs) * 1.05
    if report.fit is not None:
        ys = ys + [report.fit.intercept, report.fit.target]
    ymin, ymax = min(ys), max(ys)
    if ymax - ymin < 1e-12:
        ymin, ymax = ymin - 1.0, ymax + 1.0
    span = ymax - ymin
    ymin, ymax = ymin - 0.05 * span, ymax + 0.05 * span

    def sx(v):
        return pad + (v - xmin) / (xmax - xmin) * (width - 2 * pad)

    def sy(v):
        return height - pad - (v - ymin) / (ymax - ymin) * (height - 2 * pad)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f"<title>{report.experiment} {report.model}</title>",
        f'<path class="axes" d="M{pad} {pad} V{height - pad} H{width - pad}" fill="none" stroke="black"/>',
        f'<text x="{width / 2:.0f}" y="{height - 8}" text-anchor="middle" font-size="12">epsilon</text>',
    ]
    for ex, ey in pts:
        out.append(f'<circle class="estimate" cx="{_fmt(sx(ex))}" cy="{_fmt(sy(ey))}" r="3"/>')
    if report.fit is not None:
        grid = [xmin + (xmax - xmin) * i / 50 for i in range(51)]
        grid[0] = max(grid[0], 1e-9)
        fit_pts = " ".join(f"{_fmt(sx(g))},{_fmt(sy(report.fit.predict(g)))}" for g in grid)
        out.append(f'<polyline class="fit" points="{fit_pts}" fill="none" stroke="blue"/>')
        t = report.fit.target
        out.append(
            f'<polyline class="target" points="{_fmt(sx(xmin))},{_fmt(sy(t))} {_fmt(sx(xmax))},{_fmt(sy(t))}" '
            f'fill="none" stroke="red" stroke-dasharray="4 3"/>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_report(report: ExperimentReport, out_dir) -> dict[str, Path]:
    """Write report.json, curves.csv, plot.svg and timing.json into out_dir."""
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    files = {
        "report": d / "report.json",
        "curves": d / "curves.csv",
        "plot": d / "plot.svg",
        "timing": d / "timing.json",
    }
    files["report"].write_text(dumps_report(report))
    with open(files["curves"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epsilon", "estimate", "stderr"])
        for e in report.estimates:
            w.writerow([repr(float(e.epsilon)), repr(float(e.value)), repr(float(e.stderr))])
    files["plot"].write_text(render_svg(report))
    files["timing"].write_text(json.dumps({"runtime_s": report.runtime_s}) + "\n")
    return files
