"""Experiment configuration: a flat JSON record with per-experiment defaults."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

DEFAULT_TOLERANCES = {
    "leandre": 0.15,  # relative error of the extrapolated limit
    "leandre_abs": 0.1,  # absolute error when the target is 0
    "tube": 0.2,  # rate units
    "concentration_floor": 0.9,
    "reversal_pvalue": 0.01,
}


@dataclass
class ExperimentConfig:
    model: dict | str = "heisenberg"
    x: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    y: list = field(default_factory=lambda: [1.0, 0.0, 0.0])
    eps_grid: list = field(default_factory=lambda: [0.5, 0.3, 0.2, 0.15, 0.1])
    # heat-kernel samples per eps, or the proposal budget per eps for bridge experiments
    samples_per_eps: int = 100_000
    target_count: int | None = None
    steps_N: int | None = None
    ball_radius_rule: float | dict = 0.5
    alpha: float = 0.4
    window_n: int = 8
    thresholds: list = field(default_factory=lambda: [6.0])
    delta: float = 0.25
    radius: float = 0.25
    gamma: str | dict = "geodesic"
    eps_reverse: float | None = None
    tolerances: dict = field(default_factory=dict)
    num_batches: int = 20
    sanchez_calle: bool = True
    importance_sampling: bool = True
    geodesic: dict = field(default_factory=dict)
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        self.tolerances = {**DEFAULT_TOLERANCES, **(self.tolerances or {})}
        self.eps_grid = [float(e) for e in self.eps_grid]
        check_eps_grid(self.eps_grid)
        if self.num_batches < 2:
            raise ValueError("num_batches must be at least 2")

    def steps_for(self, experiment: str) -> int:
        if self.steps_N is not None:
            return int(self.steps_N)
        return 16 if experiment == "leandre" else 32

    def ball_radius(self, epsilon: float) -> float:
        """Acceptance radius: ``c * sqrt(eps)`` for a number c, or {"coef": c} / {"fixed": r}."""
        rule = self.ball_radius_rule
        if isinstance(rule, dict):
            if "fixed" in rule:
                return float(rule["fixed"])
            return float(rule["coef"]) * math.sqrt(epsilon)
        return float(rule) * math.sqrt(epsilon)

    def eps_seed(self, k: int) -> int:
        """Seed of the k-th simulation run derived from the master seed."""
        return int(np.random.SeedSequence([self.seed, k]).generate_state(1)[0])

    def with_overrides(self, **kw) -> ExperimentConfig:
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def check_eps_grid(grid) -> None:
    if len(grid) == 0:
        raise ValueError("eps_grid is empty")
    if any(not (0.0 < e <= 1.0) for e in grid):
        raise ValueError(f"eps values must lie in (0, 1]: {grid}")
    if any(b >= a for a, b in zip(grid, grid[1:])):
        raise ValueError(f"eps_grid must be strictly decreasing: {grid}")


def load_config(source) -> ExperimentConfig:
    """Build a config from a dict, a JSON string or a path to a JSON file."""
    if isinstance(source, ExperimentConfig):
        return source
    if isinstance(source, (str, Path)) and not str(source).lstrip().startswith("{"):
        data = json.loads(Path(source).read_text())
    elif isinstance(source, (str, bytes)):
        data = json.loads(source)
    else:
        data = dict(source)
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return ExperimentConfig(**data)
