"""Command-line entry point.

Subcommands: evolve, replay, analyze, ablate, lod.  Every run is
reproducible from its config snapshot and seed alone.
"""

import argparse
import os
import sys

import numpy as np

from . import analysis, evolution
from .evolution import GATE_SETS, RunConfig, read_lod
from .genome import genome_from_hex
from .rngstream import TAG_ABLATE, substream
from .world import N_MAPPINGS
from . import brain as brain_mod
from . import world as world_mod

CONFIG_HELP = "\n".join(
    f"  {f.name} (default {getattr(RunConfig(), f.name)})"
    for f in RunConfig.__dataclass_fields__.values())


def _load_config(args):
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    for key in ("seed", "workers", "generations", "population", "gates"):
        val = getattr(args, key, None)
        if val is not None:
            setattr(cfg, key, val)
    cfg.__post_init__()
    return cfg


def cmd_evolve(args):
    cfg = _load_config(args)
    if os.path.isdir(args.out) and os.listdir(args.out):
        print(f"warning: output dir {args.out} exists; files will be overwritten",
              file=sys.stderr)
    run = evolution.run_evolution(cfg, args.out)
    print(f"run complete: {run.path}")
    return 0


def _run_config(run_dir):
    return RunConfig.from_file(os.path.join(run_dir, "config.txt"))


def _select_lod_agent(run_dir, selector):
    records, _ = read_lod(os.path.join(run_dir, "lod.jsonl"))
    if not records:
        raise SystemExit("empty line of descent")
    if selector == "final":
        rec = records[-1]
    else:
        try:
            rec = records[int(selector)]
        except (ValueError, IndexError):
            raise SystemExit(f"unknown agent selector {selector!r} "
                             f"(use 'final' or 0..{len(records) - 1})")
    return rec, genome_from_hex(rec["genome_hex"])


def cmd_replay(args):
    if not 0 <= args.mapping < N_MAPPINGS:
        raise SystemExit(f"invalid mapping index {args.mapping} (must be 0-23)")
    cfg = _run_config(args.run)
    rec, sites = _select_lod_agent(args.run, args.agent)
    b = brain_mod.build_brain(sites, cfg.gate_kinds)
    rng = substream(args.seed if args.seed is not None else cfg.seed,
                    0, 0, args.mapping, TAG_ABLATE)
    trace = []
    result = world_mod.run_trial(b, args.mapping, rng, size=cfg.world_size,
                                 wall_p=cfg.wall_fraction,
                                 start_distance=cfg.start_distance,
                                 steps=cfg.steps, trace=trace,
                                 generation=rec["generation"])
    out = args.out or os.path.join(args.run, f"trace_m{args.mapping}.csv")
    with open(out, "w") as fh:
        fh.write(f"# seed={args.seed if args.seed is not None else cfg.seed}\n")
        fh.write("generation,mapping,step,s0,s1,s2,s3,o0,o1,row,col,heading\n")
        for row in trace:
            fh.write(",".join(map(str, row)) + "\n")
    print(f"trace written to {out} (score={result.score:.4f} "
          f"goals={result.goal_reaches})")
    return 0


def cmd_analyze(args):
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)
    runs = args.runs
    seed = args.seed if args.seed is not None else _run_config(runs[0]).seed

    rows = analysis.performance_summary(runs)
    analysis.write_fig2(os.path.join(out_dir, "fig2_performance.csv"), rows, seed)

    pairs = []
    mi_points = []
    fig3_written = False
    for run_dir in runs:
        records, _ = read_lod(os.path.join(run_dir, "lod.jsonl"))
        if not records:
            continue
        rec = records[-1]
        pairs.append((rec["n_fb"], rec["n_det"]))
        if rec["n_fb"] > 0:
            cfg = _run_config(run_dir)
            sites = genome_from_hex(rec["genome_hex"])
            report = analysis.mi_report(sites, cfg, seed, repeats=args.repeats)
            mi_points.append((report.mean_goals, report.delta_mean))
            if not fig3_written:
                analysis.write_fig3(os.path.join(out_dir, "fig3_tables.csv"),
                                    report, seed)
                fig3_written = True
    analysis.write_fig4(os.path.join(out_dir, "fig4_mi.csv"), mi_points, seed)
    analysis.write_fig5(os.path.join(out_dir, "fig5_gates.csv"), pairs, seed)
    analysis.write_fig6(os.path.join(out_dir, "fig6_actions.csv"),
                        analysis.action_usage(runs), seed)
    print(f"analysis written to {out_dir}")
    return 0


def cmd_ablate(args):
    cfg = _run_config(args.run)
    rec, sites = _select_lod_agent(args.run, args.agent)
    seed = args.seed if args.seed is not None else cfg.seed
    report = analysis.ablate_and_compare(sites, cfg, seed, repeats=args.repeats)
    out = args.out or os.path.join(args.run, "ablation.csv")
    with open(out, "w") as fh:
        fh.write(f"# seed={seed}\n")
        fh.write("repeat,active_mean_goals,frozen_mean_goals\n")
        for i, (a, f) in enumerate(report.pairs):
            fh.write(f"{i},{a:.9g},{f:.9g}\n")
    print(f"agent {rec['id']} ({report.n_feedback_gates} feedback gates): "
          f"active={report.active_mean:.3f} frozen={report.frozen_mean:.3f} "
          f"diff={report.difference:+.3f} -> {out}")
    return 0


def cmd_lod(args):
    records, mrca = read_lod(os.path.join(args.run, "lod.jsonl"))
    print(f"{len(records)} ancestors on the line of descent; "
          f"MRCA id: {mrca if mrca is not None else 'none (pre-founder)'}")
    for rec in records if args.full else records[-5:]:
        print(f"  gen {rec['generation']:>6} id {rec['id']:>9} "
              f"log_w {rec['log_w']:.3f} goals/mapping {rec['mean_goals']:.2f} "
              f"gates d/p/f {rec['n_det']}/{rec['n_prob']}/{rec['n_fb']}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="mazebrain",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        description="Evolve gate-network agents that learn scrambled action "
                    "mappings while navigating random mazes.",
        epilog="Config keys (flat `key = value` file; defaults reproduce the "
               "reference setup):\n" + CONFIG_HELP)
    sub = p.add_subparsers(dest="command", required=True)

    pe = sub.add_parser("evolve", help="run an evolutionary experiment")
    pe.add_argument("--config", help="config file (key = value lines)")
    pe.add_argument("--seed", type=int, help="master seed")
    pe.add_argument("--out", required=True, help="output run directory")
    pe.add_argument("--workers", type=int, help="parallel evaluation width "
                    "(output identical for any value)")
    pe.add_argument("--generations", type=int)
    pe.add_argument("--population", type=int)
    pe.add_argument("--gates", choices=sorted(GATE_SETS),
                    help="allowed gate kinds: d, dp, or dpf")
    pe.set_defaults(func=cmd_evolve)

    pr = sub.add_parser("replay", help="re-run one LOD agent on one mapping "
                        "and write a step trace")
    pr.add_argument("--run", required=True)
    pr.add_argument("--agent", default="final",
                    help="'final' or an index into the line of descent")
    pr.add_argument("--mapping", type=int, required=True, help="0-23")
    pr.add_argument("--seed", type=int)
    pr.add_argument("--out")
    pr.set_defaults(func=cmd_replay)

    pa = sub.add_parser("analyze", help="emit figure-analogue CSVs from runs")
    pa.add_argument("--runs", nargs="+", required=True)
    pa.add_argument("--out", required=True)
    pa.add_argument("--seed", type=int)
    pa.add_argument("--repeats", type=int, default=analysis.DEFAULT_REPEATS)
    pa.set_defaults(func=cmd_analyze)

    pb = sub.add_parser("ablate", help="compare an agent with feedback "
                        "active vs. frozen")
    pb.add_argument("--run", required=True)
    pb.add_argument("--agent", default="final")
    pb.add_argument("--seed", type=int)
    pb.add_argument("--repeats", type=int, default=analysis.DEFAULT_REPEATS)
    pb.add_argument("--out")
    pb.set_defaults(func=cmd_ablate)

    pl = sub.add_parser("lod", help="print the line of descent")
    pl.add_argument("--run", required=True)
    pl.add_argument("--full", action="store_true")
    pl.set_defaults(func=cmd_lod)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
