"""Command-line entry point: simulate, compare, oracle-check, gen-workload.

Config files are flat ``key = value`` text (keys match SimConfig fields);
command-line flags override file values. All outputs are written atomically
(temp file + rename) so failures never leave partial files.
"""
from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import json
import math
import os
import statistics
import sys
from typing import Optional, Sequence

from . import oracle, sim, workload
from .sim import SCHEDULERS, ConfigError, SimConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TRACE = 3
EXIT_THRESHOLD = 4

GAP_WITHIN = 1.25
GAP_WITHIN_FRAC = 0.90
GAP_EQUAL_FRAC = 0.50


def _coerce(raw: str, target_type) -> object:
    raw = raw.strip()
    if target_type is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected boolean, got {raw!r}")
    if target_type is int:
        return int(raw)
    if target_type is float:
        return float(raw)
    if raw.lower() in ("none", ""):
        return None
    return raw


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(SimConfig)}


def load_config(path: str) -> SimConfig:
    """Parse a flat key=value config file into a SimConfig."""
    values: dict = {}
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected key = value")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in _FIELD_TYPES:
                raise ConfigError(f"{path}:{line_no}: unknown config key {key!r}")
            if key == "capacity_mix":
                values[key] = tuple(float(x) for x in raw.split(","))
                continue
            hint = _FIELD_TYPES[key]
            if "bool" in str(hint):
                values[key] = _coerce(raw, bool)
            elif "int" in str(hint):
                values[key] = _coerce(raw, int)
            elif "float" in str(hint):
                values[key] = _coerce(raw, float)
            else:
                values[key] = _coerce(raw, str)
    return SimConfig(**values)


def save_config(cfg: SimConfig, path: str) -> None:
    lines = []
    for f in dataclasses.fields(SimConfig):
        value = getattr(cfg, f.name)
        if value is None:
            value = "none"
        elif isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, tuple):
            value = ",".join(repr(v) for v in value)
        lines.append(f"{f.name} = {value}")
    atomic_write(path, "\n".join(lines) + "\n")


def atomic_write(path: str, text: str) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _apply_overrides(cfg: SimConfig, args: argparse.Namespace) -> SimConfig:
    updates = {}
    for flag, field_name in (
        ("seed", "seed"), ("scheduler", "scheduler"), ("epsilon", "epsilon"),
        ("tiers", "tiers"), ("scenario", "scenario"), ("n_jobs", "n_jobs"),
        ("horizon", "horizon_s"), ("trace", "trace_file"), ("workload", "workload_file"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            updates[field_name] = value
    if getattr(args, "no_matching", False):
        updates["matching"] = False
    return dataclasses.replace(cfg, **updates) if updates else cfg


def _resolve_config(args: argparse.Namespace) -> SimConfig:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        cfg = SimConfig()
    cfg = _apply_overrides(cfg, args)
    cfg.validate()
    return cfg


def _run_cell(cfg_dict: dict) -> dict:
    cfg = SimConfig(**{**cfg_dict, "capacity_mix": tuple(cfg_dict["capacity_mix"])})
    report = sim.run(cfg)
    return {
        "scheduler": report.scheduler,
        "seed": report.seed,
        "report": report,
    }


def cmd_simulate(args: argparse.Namespace) -> int:
    try:
        cfg = _resolve_config(args)
    except (OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        report = sim.run(cfg)
    except (workload.ParseError, workload.EmptyTrace) as exc:
        print(f"trace error: {exc}", file=sys.stderr)
        return EXIT_TRACE
    except OSError as exc:
        print(f"trace error: {exc}", file=sys.stderr)
        return EXIT_TRACE
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)
    atomic_write(os.path.join(out_dir, f"report-{report.run_id()}.csv"), report.csv_text())
    atomic_write(
        os.path.join(out_dir, f"summary-{report.run_id()}.json"),
        json.dumps(report.summary(), indent=2, sort_keys=True) + "\n",
    )
    avg = report.avg_jct_s
    print(f"avg_jct_s={avg:.3f}" if not math.isnan(avg) else "avg_jct_s=nan")
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    try:
        cfg = _resolve_config(args)
        schedulers = [s.strip() for s in args.schedulers.split(",") if s.strip()]
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
        if not schedulers or not seeds:
            raise ConfigError("need at least one scheduler and one seed")
        for s in schedulers:
            if s not in SCHEDULERS:
                raise ConfigError(f"unknown scheduler {s!r}")
        baseline = args.baseline
        if baseline not in schedulers:
            schedulers.append(baseline)
    except (OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    cells = []
    for sched in schedulers:
        for seed in seeds:
            cell = dataclasses.replace(cfg, scheduler=sched, seed=seed)
            cells.append(dataclasses.asdict(cell))
    try:
        if args.jobs > 1:
            with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
                results = list(pool.map(_run_cell, cells))
        else:
            results = [_run_cell(c) for c in cells]
        reports = [r["report"] for r in results]
        table = sim.aggregate(reports, baseline=baseline)
    except (workload.ParseError, workload.EmptyTrace, OSError) as exc:
        print(f"trace error: {exc}", file=sys.stderr)
        return EXIT_TRACE
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    os.makedirs(args.out, exist_ok=True)
    rows = table.rows()
    header = list(rows[0].keys())
    csv_lines = [",".join(header)]
    for row in rows:
        csv_lines.append(",".join(_fmt_cell(row[h]) for h in header))
    atomic_write(os.path.join(args.out, "speedup_table.csv"), "\n".join(csv_lines) + "\n")
    atomic_write(
        os.path.join(args.out, "compare.json"),
        json.dumps(
            {
                "baseline": table.baseline,
                "scenario": table.scenario,
                "seeds": table.seeds,
                "avg_jct": table.avg_jct,
                "speedup": table.speedup,
                "demand_buckets": table.demand_buckets,
                "spec_buckets": table.spec_buckets,
                "fairness": table.fairness,
                "config": dataclasses.asdict(cfg),
            },
            indent=2, sort_keys=True,
        ) + "\n",
    )
    for row in rows:
        print("  ".join(f"{k}={_fmt_cell(v)}" for k, v in row.items()))
    return EXIT_OK


def _fmt_cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def cmd_oracle_check(args: argparse.Namespace) -> int:
    rng = workload.rng_stream(args.seed, "oracle-instances")
    instances: list[oracle.ExactInstance] = []
    try:
        if args.instance_file:
            with open(args.instance_file) as fh:
                instances = oracle.load_instances(fh)
        else:
            instances = [
                oracle.random_instance(rng, max_devices=args.max_devices, max_jobs=args.max_jobs)
                for _ in range(args.instances)
            ]
    except (OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    gaps = []
    below = 0
    for inst in instances:
        opt = oracle.solve_exact(inst, device_cap=max(16, inst.n_devices),
                                 job_cap=max(4, inst.n_jobs))
        res = sim.replay_instance(inst, policy="venn")
        if not res.completed or opt.average_delay <= 0:
            gaps.append(math.inf)
            continue
        gap = res.average_delay / opt.average_delay
        if gap < 1.0 - 1e-9:
            below += 1
        gaps.append(gap)

    finite = sorted(g for g in gaps if math.isfinite(g))
    frac_equal = sum(1 for g in gaps if g <= 1.0 + 1e-9) / len(gaps)
    frac_within = sum(1 for g in gaps if g <= GAP_WITHIN + 1e-9) / len(gaps)
    p50 = statistics.median(finite) if finite else math.inf
    p90 = finite[min(len(finite) - 1, math.ceil(0.9 * len(finite)) - 1)] if finite else math.inf
    worst = max(gaps)

    os.makedirs(args.out, exist_ok=True)
    lines = ["instance,gap"]
    lines += [f"{i},{g if math.isfinite(g) else 'inf'}" for i, g in enumerate(gaps)]
    atomic_write(os.path.join(args.out, "oracle_gaps.csv"), "\n".join(lines) + "\n")
    print(
        f"instances={len(gaps)} equal={frac_equal:.3f} within_{GAP_WITHIN}={frac_within:.3f} "
        f"p50={p50:.4f} p90={p90:.4f} max={worst if math.isfinite(worst) else 'inf'} below_optimum={below}"
    )
    ok = below == 0 and frac_within >= GAP_WITHIN_FRAC and frac_equal >= GAP_EQUAL_FRAC
    return EXIT_OK if ok else EXIT_THRESHOLD


def cmd_gen_workload(args: argparse.Namespace) -> int:
    try:
        cfg = _resolve_config(args)
        catalog = workload.default_catalog(
            n=cfg.catalog_size,
            demand_range=(cfg.demand_lo, cfg.demand_hi),
            rounds_range=(cfg.rounds_lo, cfg.rounds_hi),
            deadline_range=(cfg.deadline_lo, cfg.deadline_hi),
            report_threshold=cfg.report_threshold,
            seed=cfg.catalog_seed,
        )
        scenario = workload.WorkloadScenario(
            name=cfg.scenario, n_jobs=cfg.n_jobs,
            mean_interarrival_s=cfg.mean_interarrival_s, seed=cfg.seed,
        )
        jobs = workload.sample_workload(scenario, catalog)
    except (OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    import io

    buf = io.StringIO()
    workload.save_job_file(jobs, buf)
    atomic_write(args.out_file, buf.getvalue())
    print(f"wrote {len(jobs)} jobs to {args.out_file}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedsched",
        description="Multi-job edge-device scheduling simulator and verification tools",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--scheduler", choices=SCHEDULERS, default=None)
        p.add_argument("--epsilon", type=float, default=None, help="fairness knob")
        p.add_argument("--tiers", type=int, default=None, help="matcher tier count")
        p.add_argument("--no-matching", action="store_true", help="disable tier matching")
        p.add_argument("--scenario", default=None)
        p.add_argument("--n-jobs", dest="n_jobs", type=int, default=None)
        p.add_argument("--horizon", type=float, default=None)
        p.add_argument("--trace", default=None, help="device trace file (jsonl or csv)")
        p.add_argument("--workload", default=None, help="job workload file (jsonl or csv)")
        p.add_argument("--out", default="runs", help="output directory")

    p_sim = sub.add_parser("simulate", help="run one simulation")
    common(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_cmp = sub.add_parser("compare", help="run a scheduler x seed grid and aggregate")
    common(p_cmp)
    p_cmp.add_argument("--schedulers", default="venn,fifo,srsf,random")
    p_cmp.add_argument("--seeds", default="0,1,2")
    p_cmp.add_argument("--baseline", default="random")
    p_cmp.add_argument("--jobs", type=int, default=1, help="parallel simulation processes")
    p_cmp.set_defaults(func=cmd_compare)

    p_orc = sub.add_parser("oracle-check", help="heuristic-vs-exact optimality gaps")
    p_orc.add_argument("--instances", type=int, default=200)
    p_orc.add_argument("--max-devices", type=int, default=10)
    p_orc.add_argument("--max-jobs", type=int, default=4)
    p_orc.add_argument("--seed", type=int, default=0)
    p_orc.add_argument("--instance-file", default=None, help="JSONL of instances to check")
    p_orc.add_argument("--out", default="runs")
    p_orc.set_defaults(func=cmd_oracle_check)

    p_gen = sub.add_parser("gen-workload", help="sample a job workload file")
    common(p_gen)
    p_gen.add_argument("--out-file", default="workload.jsonl")
    p_gen.set_defaults(func=cmd_gen_workload)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
