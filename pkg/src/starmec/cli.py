"""Command-line front end: single solves, sweeps, baselines, instance export."""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import energy as energy_mod
from . import ris as ris_mod
from .bcd import Baseline, optimize, run_baseline
from .channel import dump_channels, sample_channels
from .experiments import (
    SweepSpec,
    run_sweep,
    summarize,
    write_rows_csv,
    write_summary_csv,
)
from .model import Protocol, SolveReport, SystemConfig


def _load_config(path: str | None) -> SystemConfig:
    if path is None:
        return SystemConfig()
    return SystemConfig.from_json(path)


def report_to_json_dict(report: SolveReport) -> dict:
    return {
        "schema": "solve_report_v1",
        "scheme": report.scheme,
        "objective_bps": report.objective,
        "objective_trace": report.objective_trace,
        "per_user_offload_rate": [float(x) for x in report.per_user_offload_rate],
        "per_user_local_rate": [float(x) for x in report.per_user_local_rate],
        "rank_residual": report.rank_residual,
        "binary_residual": report.binary_residual,
        "iterations": report.iterations,
        "wall_time_s": report.wall_time_s,
        "flags": list(report.flags),
    }


def _print_report(report: SolveReport) -> None:
    print(f"scheme={report.scheme} objective={report.objective:.6e} bits/s "
          f"iterations={report.iterations} rank_residual={report.rank_residual:.3e}")


def _cmd_run(args) -> int:
    cfg = _load_config(args.config)
    if args.protocol is not None:
        cfg = cfg.with_(protocol=Protocol(args.protocol))
    channels = sample_channels(cfg, args.seed)
    if args.dump_channels:
        dump_channels(channels, args.dump_channels)
    report = optimize(channels, cfg, args.seed)
    _print_report(report)
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(report_to_json_dict(report), fh, indent=2)
    return 0


def _cmd_baseline(args) -> int:
    cfg = _load_config(args.config)
    channels = sample_channels(cfg, args.seed)
    report = run_baseline(Baseline(args.kind), channels, cfg)
    _print_report(report)
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(report_to_json_dict(report), fh, indent=2)
    return 0


def _cmd_sweep(args) -> int:
    spec = SweepSpec.from_json(args.spec)
    rows = run_sweep(spec, n_jobs=args.jobs)
    write_rows_csv(rows, args.out)
    n_err = sum(1 for r in rows if r.status != "ok")
    print(f"wrote {len(rows)} rows to {args.out} ({n_err} errors)")
    if args.summary_out:
        write_summary_csv(summarize(rows), args.summary_out)
        print(f"wrote summary to {args.summary_out}")
    return 0


def _cmd_export_instance(args) -> int:
    cfg = _load_config(args.config)
    if args.protocol is not None:
        cfg = cfg.with_(protocol=Protocol(args.protocol))
    channels = sample_channels(cfg, args.seed)
    warm = cfg.with_(bcd_max_iters=max(1, args.bcd_iters))
    report = optimize(channels, warm, args.seed)
    v = report.beamformers.v
    a = report.energy.a
    state = report.ris_state
    if args.kind == "ris":
        lc = ris_mod.build_lifted(channels, v, a, cfg)
        anchor = ris_mod.lift_state(state)
        solution = ris_mod.solve_ris_subproblem(lc, cfg, anchor)
        objective = ris_mod.surrogate_objective(lc, cfg, anchor, solution)
        doc = ris_mod.export_instance_doc(lc, cfg, anchor, solution, objective)
    else:
        obj = energy_mod.build_energy_objective(v, channels, state, cfg)
        solution, _ = energy_mod.solve_energy_subproblem(a, obj)
        doc = {
            "schema": "energy_subproblem_v1",
            "n_users": obj.n_users,
            "rate_bandwidth_hz": float(np.asarray(obj.rate_bw)),
            "gains": obj.gains.tolist(),
            "noise_terms": obj.noise.tolist(),
            "e_tilde": obj.e_tilde.tolist(),
            "local_scale": obj.local_scale.tolist(),
            "a_max": obj.a_max,
            "anchor_a": a.tolist(),
            "primary": {
                "objective": energy_mod.surrogate_objective(solution, obj, a),
                "a": solution.tolist(),
            },
        }
    ris_mod.write_instance(doc, args.out)
    print(f"exported {args.kind} instance to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="starmec",
        description="STAR-RIS-aided MEC sum computation-rate maximization")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="solve a single realization")
    p_run.add_argument("--config", default=None, help="SystemConfig JSON path")
    p_run.add_argument("--seed", type=int, default=0)
    p_run.add_argument("--protocol", choices=["es", "ms"], default=None)
    p_run.add_argument("--out", default=None, help="write the solve report JSON here")
    p_run.add_argument("--dump-channels", default=None,
                       help="write the sampled channels as JSON")
    p_run.set_defaults(func=_cmd_run)

    p_base = sub.add_parser("baseline", help="run one comparison scheme")
    p_base.add_argument("--kind", required=True,
                        choices=[b.value for b in Baseline])
    p_base.add_argument("--config", default=None)
    p_base.add_argument("--seed", type=int, default=0)
    p_base.add_argument("--out", default=None)
    p_base.set_defaults(func=_cmd_baseline)

    p_sweep = sub.add_parser("sweep", help="paired Monte-Carlo sweep to CSV")
    p_sweep.add_argument("--spec", required=True, help="SweepSpec JSON path")
    p_sweep.add_argument("--out", required=True, help="output CSV path")
    p_sweep.add_argument("--summary-out", default=None)
    p_sweep.add_argument("--jobs", type=int, default=None)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_exp = sub.add_parser("export-instance",
                           help="dump one convex subproblem for external validation")
    p_exp.add_argument("--kind", choices=["ris", "energy"], required=True)
    p_exp.add_argument("--config", default=None)
    p_exp.add_argument("--seed", type=int, default=0)
    p_exp.add_argument("--protocol", choices=["es", "ms"], default=None)
    p_exp.add_argument("--bcd-iters", type=int, default=2,
                       help="warm-up BCD cycles before exporting")
    p_exp.add_argument("--out", required=True)
    p_exp.set_defaults(func=_cmd_export_instance)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
