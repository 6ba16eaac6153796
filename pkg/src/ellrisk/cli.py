"""Command-line entry point: ``ellrisk {prob,bench-table1,simulate,crosscheck}``.

Exit codes: 0 on success, 1 for unreadable or malformed input files, 2 when a
series evaluation did not converge and no fallback was allowed.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import statistics
import sys
from pathlib import Path

from . import quadform
from .assess import AssessOptions, CollisionQuery, assess
from .config import ConfigError, bundled, load_scenario, load_scene
from .oracle import mc_collision_probability
from .riskbounds import RiskMethod
from .sim import SCHEMA, aggregate, metrics_csv, run_batch

DEFAULT_SEED = 0
BENCH_METHODS = (RiskMethod.EXACT, RiskMethod.UPPER_BOUND, RiskMethod.MC,
                 RiskMethod.BOUNDING_VOLUME, RiskMethod.CENTER_POINT)
METHOD_ALIASES = {"upper": "upper_bound", "bv": "bounding_volume", "center": "center_point"}


def _method(name: str) -> RiskMethod:
    return RiskMethod(METHOD_ALIASES.get(name, name))


def _resolve(path: str) -> Path:
    """A file path, or the name of a file shipped with the package."""
    p = Path(path)
    if p.exists():
        return p
    try:
        return bundled(path)
    except ConfigError:
        raise ConfigError(f"{path}: no such file") from None


def _queries(scene):
    for i, (obs, cov) in enumerate(zip(scene.obstacles, scene.obstacle_covs)):
        yield i, CollisionQuery(scene.robot, obs, scene.robot_cov, cov)


def _options(args, fallback: bool = True) -> AssessOptions:
    return AssessOptions(tol=args.tol, mc_samples=args.mc_samples, seed=args.seed,
                         mc_fallback=fallback)


def cmd_prob(args) -> int:
    scene = load_scene(_resolve(args.scene))
    eps = scene.epsilon if args.eps is None else args.eps
    methods = BENCH_METHODS if args.method == "all" else (_method(args.method),)
    opts = _options(args, fallback=not args.no_fallback)
    for i, q in _queries(scene):
        for m in methods:
            r = assess(q, m, eps, opts)
            record = {"obstacle": i, "method": m.value, "probability": r.probability,
                      "wall_time_s": r.compute_time, "epsilon": eps, "feasible": r.feasible}
            if m is RiskMethod.MC:
                record["seed"] = args.seed
                record["stderr"] = r.detail["stderr"]
            print(json.dumps(record))
    return 0


def bench_rows(scene, eps: float, opts: AssessOptions, reps: int) -> list[dict]:
    rows = []
    for i, q in _queries(scene):
        for m in BENCH_METHODS:
            times = []
            r = None
            for _ in range(reps):
                r = assess(q, m, eps, opts)
                times.append(r.compute_time)
            rows.append({
                "obstacle": i, "method": m.value, "probability": r.probability,
                "time_s_mean": statistics.fmean(times),
                "time_s_std": statistics.stdev(times) if len(times) > 1 else 0.0,
                "feasible": r.feasible,
                "stderr": r.detail.get("stderr", "") if r.detail else "",
            })
    return rows


def cmd_bench_table1(args) -> int:
    scene = load_scene(_resolve(args.scene))
    eps = scene.epsilon if args.eps is None else args.eps
    rows = bench_rows(scene, eps, _options(args), args.reps)
    buf = io.StringIO()
    buf.write(SCHEMA + "\n")
    w = csv.DictWriter(buf, fieldnames=list(rows[0]) if rows else ["method"],
                       lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(buf.getvalue())
    sys.stdout.write(buf.getvalue())
    return 0


def cmd_simulate(args) -> int:
    cfg = load_scenario(_resolve(args.scenario))
    changes = {}
    if args.noise_scale is not None:
        changes["noise_scale"] = args.noise_scale
    if args.eps is not None:
        changes["epsilon"] = args.eps
    if changes:
        cfg = cfg.with_(**changes)
    runs = cfg.runs if args.runs is None else args.runs
    method = _method(args.method)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = run_batch(cfg, method, runs, args.seed)
    rows = []
    files = {}
    for i, (traj, m) in enumerate(results):
        name = f"run_{i:03d}.csv"
        text = traj.to_csv()
        (out / name).write_text(text)
        files[name] = hashlib.sha256(text.encode()).hexdigest()
        rows.append((f"run_{i:03d}", m))
    agg = aggregate([m for _, m in results])
    rows.append(("aggregate", agg))
    text = metrics_csv(rows)
    (out / "metrics.csv").write_text(text)
    files["metrics.csv"] = hashlib.sha256(text.encode()).hexdigest()
    summary = {
        "scenario": cfg.to_dict(), "method": method.value, "runs": runs, "seed": args.seed,
        "aggregate": {"d_mean": agg.d, "d_std": agg.d_std, "l": agg.l, "T": agg.T,
                      "sp": agg.sp, "collided": agg.collided},
        "infeasible_steps": [t.infeasible_steps for t, _ in results],
        "sha256": files,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps({"out": str(out), "seed": args.seed, **summary["aggregate"]}))
    return 0


def cmd_crosscheck(args) -> int:
    """Series value, bound and Monte Carlo oracle side by side for every obstacle."""
    scene = load_scene(_resolve(args.scene))
    eps = scene.epsilon if args.eps is None else args.eps
    opts = _options(args, fallback=False)
    for i, q in _queries(scene):
        exact = assess(q, RiskMethod.EXACT, eps, opts)
        upper = assess(q, RiskMethod.UPPER_BOUND, eps, opts)
        mc = mc_collision_probability(q.robot, q.obstacle, q.sigma_robot, q.sigma_obstacle,
                                      args.mc_samples, args.seed)
        print(json.dumps({
            "obstacle": i, "exact": exact.probability, "upper_bound": upper.probability,
            "mc": mc.probability, "mc_stderr": mc.stderr, "seed": args.seed,
            "exact_minus_mc_in_stderr": ((exact.probability - mc.probability) / mc.stderr
                                         if mc.stderr > 0 else None),
            "bound_dominates_exact": upper.probability >= exact.probability,
        }))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ellrisk", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, method_default):
        sp.add_argument("--method", default=method_default)
        sp.add_argument("--mc-samples", type=int, default=1_000_000)
        sp.add_argument("--seed", type=int, default=DEFAULT_SEED)
        sp.add_argument("--tol", type=float, default=quadform.DEFAULT_TOL)
        sp.add_argument("--eps", type=float, default=None)
        sp.add_argument("--out", default=None)

    sp = sub.add_parser("prob", help="collision probability for each obstacle of a scene")
    sp.add_argument("scene")
    common(sp, "exact")
    sp.add_argument("--no-fallback", action="store_true",
                    help="exit 2 instead of falling back to Monte Carlo")
    sp.set_defaults(func=cmd_prob)

    sp = sub.add_parser("bench-table1", help="all methods on one scene, timed")
    sp.add_argument("scene", nargs="?", default="table1")
    common(sp, "all")
    sp.add_argument("--reps", type=int, default=20)
    sp.set_defaults(func=cmd_bench_table1)

    sp = sub.add_parser("simulate", help="closed-loop runs of a scenario")
    sp.add_argument("scenario")
    common(sp, "upper_bound")
    sp.add_argument("--runs", type=int, default=None)
    sp.add_argument("--noise-scale", type=float, default=None)
    sp.set_defaults(func=cmd_simulate, out="sim_out")

    sp = sub.add_parser("crosscheck", help="series and bound against the Monte Carlo oracle")
    sp.add_argument("scene")
    common(sp, "exact")
    sp.set_defaults(func=cmd_crosscheck)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except quadform.NotConverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        # ConfigError, unknown method names, singular or asymmetric input matrices
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
