"""Command-line entry point ``srlab``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path as FsPath

import numpy as np

from .control import read_csv, write_csv
from .ldplab import EXPERIMENTS, emit_report, load_config, run_experiment
from .models import ModelError, make_model
from .rough import holder_stats, rough_norm
from .sde import EmptyEnsembleError, SimConfig, sample_bridge, simulate
from .srgeom import GeodesicOptions, minimize_energy

log = logging.getLogger("srlab")


def parse_point(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")], dtype=float)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _model(args):
    params = json.loads(args.params) if args.params else {}
    return make_model(args.model, params)


def _dump(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _geodesic(args):
    model = _model(args)
    opts = GeodesicOptions(restarts=args.restarts, grid_K=args.grid, seed=args.seed, workers=args.workers)
    res = minimize_energy(model, args.start, args.end, opts)
    out = res.to_dict()
    out["model"] = model.name
    if "distance" in model.oracles:
        out["oracle_distance"] = float(model.oracles["distance"](args.start, args.end))
    return res, out


def cmd_distance(args) -> int:
    _, out = _geodesic(args)
    _dump(out)
    return 0


def cmd_geodesic(args) -> int:
    res, out = _geodesic(args)
    if args.out:
        write_csv(res.path, args.out)
        write_csv(res.h_star, FsPath(args.out).with_name(FsPath(args.out).stem + "_control.csv"))
        out["path_csv"] = str(args.out)
    _dump(out)
    return 0


def cmd_simulate(args) -> int:
    model = _model(args)
    cfg = SimConfig(args.eps, steps_N=args.steps, seed=args.seed)
    path = simulate(model, args.start, cfg, index=args.index)
    if args.out:
        write_csv(path, args.out)
    _dump({"model": model.name, "epsilon": args.eps, "seed": args.seed, "index": args.index,
           "end": path.end.tolist()})
    return 0


def cmd_bridge(args) -> int:
    model = _model(args)
    cfg = SimConfig(args.eps, steps_N=args.steps, seed=args.seed)
    try:
        ens = sample_bridge(model, args.start, args.end, cfg, ball_radius=args.radius,
                            max_proposals=args.max_proposals, target_count=args.target_count,
                            workers=args.workers)
    except EmptyEnsembleError as exc:
        print(json.dumps({"error": "empty ensemble", **exc.diagnostics}), file=sys.stderr)
        return 3
    if args.out:
        ens.save(args.out)
    meta = ens.meta()
    meta.pop("indices")
    _dump(meta)
    return 0


def cmd_holder(args) -> int:
    _, arr = read_csv(args.input)
    periodic = make_model(args.model).periodic_dims if args.model else ()
    st = holder_stats(arr, args.alpha, args.window_n, periodic)
    out = {
        "alpha": st.alpha,
        "full_norm": st.full_norm,
        "window_norm": st.window_norm,
        "window_n": st.window_n,
        "coarsened": st.coarsened,
        "grid_K": arr.shape[0] - 1,
    }
    if arr.shape[1] >= 2 and not periodic:
        rn = rough_norm(arr, args.alpha)
        out["rough_norm"] = {"path_level": rn.path_level, "area_level": rn.area_level,
                             "homogeneous": rn.homogeneous}
    _dump(out)
    return 0


def cmd_experiment(args) -> int:
    cfg = load_config(args.config) if args.config else load_config({})
    cfg = cfg.with_overrides(seed=args.seed, workers=args.workers)
    report = run_experiment(args.command, cfg)
    if args.out:
        emit_report(report, args.out)
    print(f"{report.experiment}: {report.verdict} ({report.runtime_s:.1f} s)")
    return report.exit_code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="srlab", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def model_flags(sp):
        sp.add_argument("--model", default="heisenberg")
        sp.add_argument("--params", help="JSON object of model parameters")

    for name, fn in (("distance", cmd_distance), ("geodesic", cmd_geodesic)):
        sp = sub.add_parser(name, help=f"sub-Riemannian {name} between two points")
        model_flags(sp)
        sp.add_argument("--from", dest="start", type=parse_point, required=True)
        sp.add_argument("--to", dest="end", type=parse_point, required=True)
        sp.add_argument("--restarts", type=int, default=8)
        sp.add_argument("--grid", type=int, default=64)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--workers", type=int, default=1)
        if name == "geodesic":
            sp.add_argument("--out", help="CSV file for the minimising path")
        sp.set_defaults(func=fn)

    sp = sub.add_parser("simulate", help="one trajectory of the small-noise diffusion")
    model_flags(sp)
    sp.add_argument("--from", dest="start", type=parse_point, required=True)
    sp.add_argument("--eps", type=float, required=True)
    sp.add_argument("--steps", type=int, default=64)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--index", type=int, default=0, help="trajectory index within the seed's stream")
    sp.add_argument("--out", help="CSV file for the path")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("bridge", help="rejection-sampled bridge ensemble")
    model_flags(sp)
    sp.add_argument("--from", dest="start", type=parse_point, required=True)
    sp.add_argument("--to", dest="end", type=parse_point, required=True)
    sp.add_argument("--eps", type=float, required=True)
    sp.add_argument("--steps", type=int, default=64)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--radius", type=float, help="acceptance radius (default 0.5 sqrt(eps))")
    sp.add_argument("--target-count", type=int)
    sp.add_argument("--max-proposals", type=int, default=1_000_000)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--out", help="directory for path CSVs and meta.json")
    sp.set_defaults(func=cmd_bridge)

    sp = sub.add_parser("holder", help="Hölder statistics of a path CSV")
    sp.add_argument("--input", required=True)
    sp.add_argument("--alpha", type=float, default=0.4)
    sp.add_argument("--window-n", type=int, default=1)
    sp.add_argument("--model", help="model whose periodic coordinates are wrapped")
    sp.set_defaults(func=cmd_holder)

    for name in EXPERIMENTS:
        sp = sub.add_parser(name, help=f"{name} experiment")
        sp.add_argument("--config", help="experiment JSON config")
        sp.add_argument("--out", help="output directory for the report files")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--workers", type=int)
        sp.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (ModelError, ValueError, OSError) as exc:
        print(f"srlab: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
