"""Post-hoc analyses: feedback ablation, mutual-information change,
gate-count correlation, performance and action-usage summaries.

All reports are emitted as plot-ready CSV, one file per figure analogue.
"""

import math
import os
from dataclasses import dataclass

import numpy as np

from . import engine
from .evolution import GATE_SETS, read_lod, read_stats
from .gates import table_mutual_information
from .rngstream import TAG_ABLATE, TAG_TESTBED, substream
from .world import N_MAPPINGS

DEFAULT_REPEATS = 10


def _streams(seed, rep, tag):
    return [substream(seed, rep, 0, m, tag) for m in range(N_MAPPINGS)]


@dataclass
class AblationReport:
    """Paired goal counts with feedback active vs. frozen, same streams."""
    pairs: list                 # (active_mean_goals, frozen_mean_goals) per repeat
    n_feedback_gates: int

    @property
    def active_mean(self):
        return float(np.mean([a for a, _ in self.pairs]))

    @property
    def frozen_mean(self):
        return float(np.mean([f for _, f in self.pairs]))

    @property
    def difference(self):
        return self.active_mean - self.frozen_mean


def ablate_and_compare(genome_sites, cfg, seed, repeats=DEFAULT_REPEATS):
    """Evaluate an agent normally and with every feedback gate frozen, on
    identical world/rng substreams, `repeats` times."""
    pack = engine.pack_genome(genome_sites, GATE_SETS[cfg.gates])
    params = dict(size=cfg.world_size, wall_p=cfg.wall_fraction,
                  start_distance=cfg.start_distance, steps=cfg.steps,
                  bonus=cfg.bonus)
    pairs = []
    for rep in range(repeats):
        active = engine.evaluate_pack(pack, _streams(seed, rep, TAG_ABLATE), **params)
        frozen = engine.evaluate_pack(pack, _streams(seed, rep, TAG_ABLATE),
                                      frozen=True, **params)
        pairs.append((active.mean_goals, frozen.mean_goals))
    return AblationReport(pairs=pairs, n_feedback_gates=pack.gate_counts()[2])


@dataclass
class MiReport:
    """Feedback-table mutual information at birth and at the end of each
    mapping trial."""
    birth_mi: list              # per feedback gate
    end_mi: list                # [repeat][mapping][gate]
    goal_means: list            # mean goals per repeat

    @property
    def delta_mean(self):
        if not self.birth_mi:
            return 0.0
        birth = np.array(self.birth_mi)
        ends = np.array(self.end_mi, dtype=float)   # (reps, mappings, gates)
        return float((ends - birth).mean())

    @property
    def mean_goals(self):
        return float(np.mean(self.goal_means))


def mi_report(genome_sites, cfg, seed, repeats=DEFAULT_REPEATS):
    """Run all 24 trials `repeats` times, capturing each feedback gate's
    table at birth and at trial end (before reset)."""
    pack = engine.pack_genome(genome_sites, GATE_SETS[cfg.gates])
    slices = pack.fb_table_slices()
    birth_mi = [table_mutual_information(pack.ptab[o:o + r * c].reshape(r, c))
                for _, o, r, c in slices]
    params = dict(size=cfg.world_size, wall_p=cfg.wall_fraction,
                  start_distance=cfg.start_distance, steps=cfg.steps,
                  bonus=cfg.bonus)
    end_mi = []
    goal_means = []
    end_tables = []
    for rep in range(repeats):
        res = engine.evaluate_pack(pack, _streams(seed, rep, TAG_ABLATE),
                                   collect_tables=True, **params)
        end_mi.append([[table_mutual_information(t) for t in trial.fb_end_tables]
                       for trial in res.trials])
        end_tables.append([trial.fb_end_tables for trial in res.trials])
        goal_means.append(res.mean_goals)
    report = MiReport(birth_mi=birth_mi, end_mi=end_mi, goal_means=goal_means)
    report.end_tables = end_tables
    report.birth_tables = [pack.ptab[o:o + r * c].reshape(r, c).copy()
                           for _, o, r, c in slices]
    return report


def performance_summary(run_dirs):
    """Per-generation mean goal count, its standard error across replicates
    (absent for a single replicate), and the zero-goal fraction."""
    stats = [read_stats(os.path.join(d, "stats.csv")) for d in run_dirs]
    n_gen = min(len(s["generation"]) for s in stats)
    goals = np.stack([s["mean_goal_count"][:n_gen] for s in stats])
    zero = np.stack([s["frac_zero_goal"][:n_gen] for s in stats])
    rows = []
    for g in range(n_gen):
        mean = goals[:, g].mean()
        stderr = (goals[:, g].std(ddof=1) / math.sqrt(len(stats))
                  if len(stats) > 1 else None)
        rows.append({"generation": int(stats[0]["generation"][g]),
                     "mean_goal_count": float(mean),
                     "stderr_goal_count": None if stderr is None else float(stderr),
                     "mean_frac_zero_goal": float(zero[:, g].mean())})
    return rows


def gate_count_correlation(pairs):
    """Pearson r over (feedback-gate count, deterministic-gate count)."""
    if len(pairs) < 3:
        raise ValueError("need at least 3 agents")
    x = np.array([p[0] for p in pairs], dtype=float)
    y = np.array([p[1] for p in pairs], dtype=float)
    if x.std() == 0 or y.std() == 0:
        raise ValueError("degenerate variance: a coordinate is constant")
    return float(np.corrcoef(x, y)[0, 1])


def action_usage(run_dirs):
    """Per-generation action fractions, split by whether the run's final LOD
    agent possesses feedback gates.  Returns {'with_fb': rows, 'without_fb':
    rows}; rows are (generation, frac_forward, frac_turn, frac_nothing)
    averaged over the group's replicates."""
    grouped = {"with_fb": [], "without_fb": []}
    for d in run_dirs:
        records, _ = read_lod(os.path.join(d, "lod.jsonl"))
        key = "with_fb" if records and records[-1]["n_fb"] > 0 else "without_fb"
        grouped[key].append(read_stats(os.path.join(d, "stats.csv")))
    out = {}
    for key, stats in grouped.items():
        if not stats:
            out[key] = []
            continue
        n_gen = min(len(s["generation"]) for s in stats)
        rows = []
        for g in range(n_gen):
            rows.append((int(stats[0]["generation"][g]),
                         float(np.mean([s["frac_forward"][g] for s in stats])),
                         float(np.mean([s["frac_turn"][g] for s in stats])),
                         float(np.mean([s["frac_nothing"][g] for s in stats]))))
        out[key] = rows
    return out


def bin_by_performance(points, bin_width=1.0):
    """Bin (performance, value) points into integer-width performance bins;
    returns (bin_center, mean_value, n) rows covering the observed range."""
    if not points:
        return []
    perf = np.array([p for p, _ in points])
    vals = np.array([v for _, v in points])
    lo = math.floor(perf.min())
    hi = math.floor(perf.max())
    rows = []
    edge = lo
    while edge <= hi:
        mask = (perf >= edge) & (perf < edge + bin_width)
        if mask.any():
            rows.append((edge + bin_width / 2, float(vals[mask].mean()),
                         int(mask.sum())))
        edge += bin_width
    return rows


# ---------------------------------------------------------------------------
# single-gate learning testbed
# ---------------------------------------------------------------------------

def single_gate_learning_run(target_map, seed, evals=2000, delta=0.4, depth=1):
    """Train one feedback gate against a scripted teacher.

    The gate sees 4 input patterns and 4 output patterns, starting from a
    uniform table.  The teacher emits a positive feedback bit on the next
    evaluation exactly when the previous output matched `target_map`.
    Returns (mi_birth, mi_end).
    """
    from .gates import FeedbackGate, eval_feedback

    rng = substream(seed, 0, 0, 0, TAG_TESTBED)
    table = np.full((4, 4), 0.25)
    gate = FeedbackGate(inputs=[0, 1], outputs=[2, 3], table=table,
                        pos_src=14, neg_src=15, depth=depth,
                        deltas=np.full(4, delta))
    mi_birth = table_mutual_information(gate.table)
    pos = 0
    for _ in range(evals):
        pattern = int(rng.random() * 4)
        if pattern >= 4:
            pattern = 3
        out = eval_feedback(gate, pattern, pos, 0, rng)
        pos = 1 if out == target_map[pattern] else 0
    return mi_birth, table_mutual_information(gate.table)


# ---------------------------------------------------------------------------
# CSV emitters (one file per figure analogue)
# ---------------------------------------------------------------------------

def write_fig2(path, rows, seed):
    with open(path, "w") as fh:
        fh.write(f"# seed={seed}\n")
        fh.write("generation,mean_goal_count,stderr_goal_count,mean_frac_zero_goal\n")
        for r in rows:
            se = "" if r["stderr_goal_count"] is None else f"{r['stderr_goal_count']:.9g}"
            fh.write(f"{r['generation']},{r['mean_goal_count']:.9g},{se},"
                     f"{r['mean_frac_zero_goal']:.9g}\n")


def write_fig3(path, report, seed):
    """Birth and per-mapping end tables of every feedback gate (repeat 0)."""
    with open(path, "w") as fh:
        fh.write(f"# seed={seed}\n")
        fh.write("gate,mapping,row," +
                 ",".join(f"p{c}" for c in range(16)) + "\n")
        for gi, table in enumerate(report.birth_tables):
            for r in range(table.shape[0]):
                fh.write(f"{gi},birth,{r}," +
                         ",".join(f"{v:.9f}" for v in table[r]) + "\n")
        if report.end_tables:
            for m, gate_tables in enumerate(report.end_tables[0]):
                for gi, table in enumerate(gate_tables):
                    for r in range(table.shape[0]):
                        fh.write(f"{gi},{m},{r}," +
                                 ",".join(f"{v:.9f}" for v in table[r]) + "\n")


def write_fig4(path, agent_points, seed, bin_width=1.0):
    """agent_points: (mean_goals, delta_mi) per agent; also emits bins."""
    with open(path, "w") as fh:
        fh.write(f"# seed={seed}\n")
        fh.write("kind,performance,delta_mi,n\n")
        for perf, dmi in agent_points:
            fh.write(f"agent,{perf:.9g},{dmi:.9g},1\n")
        for center, mean, n in bin_by_performance(agent_points, bin_width):
            fh.write(f"bin,{center:.9g},{mean:.9g},{n}\n")


def write_fig5(path, pairs, seed):
    with open(path, "w") as fh:
        fh.write(f"# seed={seed}\n")
        fh.write("n_feedback_gates,n_deterministic_gates\n")
        for fb, det in pairs:
            fh.write(f"{fb},{det}\n")
        try:
            fh.write(f"# pearson_r={gate_count_correlation(pairs):.9g}\n")
        except ValueError as exc:
            fh.write(f"# pearson_r=undefined ({exc})\n")


def write_fig6(path, usage, seed):
    with open(path, "w") as fh:
        fh.write(f"# seed={seed}\n")
        fh.write("group,generation,frac_forward,frac_turn,frac_nothing\n")
        for group, rows in usage.items():
            for gen, fwd, turn, nothing in rows:
                fh.write(f"{group},{gen},{fwd:.9g},{turn:.9g},{nothing:.9g}\n")
