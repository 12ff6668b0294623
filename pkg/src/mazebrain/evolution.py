"""Generational evolution: evaluation, tournament selection, mutation, and
ancestry bookkeeping for line-of-descent reconstruction.

Every stochastic step draws from a keyed substream (see `rngstream`), so a
run is reproducible from (config, seed) alone and identical for any worker
count.
"""

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields

import numpy as np

from . import engine, genome as genome_mod
from .rngstream import (TAG_FOUNDER, TAG_LOD, TAG_REPRO, randint, substream,
                        trial_streams)
from .world import N_MAPPINGS

GATE_SETS = {"d": ("deterministic",),
             "dp": ("deterministic", "probabilistic"),
             "dpf": ("deterministic", "probabilistic", "feedback")}

STATS_COLUMNS = ("generation", "max_W_log", "mean_W_log", "mean_goal_count",
                 "frac_zero_goal", "mean_det_gates", "mean_prob_gates",
                 "mean_fb_gates", "frac_forward", "frac_turn", "frac_nothing")


@dataclass
class RunConfig:
    population: int = 100
    generations: int = 100
    tournament_size: int = 5
    point_rate: float = 0.003
    dup_rate: float = 0.02
    del_rate: float = 0.02
    min_length: int = 1_000
    max_length: int = 20_000
    init_length: int = 5_000
    init_codons: int = 12
    world_size: int = 64
    wall_fraction: float = 1.0 / 7.0
    start_distance: int = 32
    steps: int = 512
    bonus: float = 512.0
    gates: str = "dpf"
    seed: int = 1
    workers: int = 1
    snapshot_interval: int = 100

    def __post_init__(self):
        if self.gates not in GATE_SETS:
            raise ValueError(f"gates must be one of {sorted(GATE_SETS)}")
        if not (1 <= self.tournament_size <= self.population):
            raise ValueError("tournament size must be in [1, population]")
        for name in ("point_rate", "dup_rate", "del_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be a probability")

    @property
    def gate_kinds(self):
        return GATE_SETS[self.gates]

    def to_text(self):
        lines = [f"{f.name} = {getattr(self, f.name)}" for f in fields(self)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for ln, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line or line.startswith("["):
                continue
            if "=" not in line:
                raise ValueError(f"line {ln}: expected key = value, got {raw!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in known:
                raise ValueError(f"line {ln}: unknown config key {key!r}")
            typ = known[key]
            if typ in (str, "str"):
                kwargs[key] = val
            elif typ in (float, "float"):
                kwargs[key] = float(val)
            else:
                kwargs[key] = int(val)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            return cls.from_text(fh.read())


@dataclass
class Individual:
    id: int
    parent_id: int            # -1 for founders
    generation: int
    genome: np.ndarray
    fitness_log: float = None
    w: float = None
    goals_per_mapping: list = None
    action_totals: np.ndarray = None
    gate_counts: tuple = None   # (det, prob, fb)

    @property
    def total_goals(self):
        return sum(self.goals_per_mapping)

    @property
    def mean_goals(self):
        return self.total_goals / len(self.goals_per_mapping)


class Ancestry:
    """Parent graph of the whole run, plus genomes of every individual that
    may still be needed for exact LOD reconstruction."""

    def __init__(self):
        self.meta = {}      # id -> (parent_id, generation, fitness_log, mean_goals, gate_counts)
        self.genomes = {}   # id -> genome, pruned to ancestors of the living

    def add(self, ind):
        self.meta[ind.id] = (ind.parent_id, ind.generation, ind.fitness_log,
                             ind.mean_goals, ind.gate_counts)
        self.genomes[ind.id] = ind.genome

    def prune(self, live_ids):
        keep = set()
        frontier = set(live_ids)
        while frontier:
            keep |= frontier
            frontier = {self.meta[i][0] for i in frontier
                        if i in self.meta and self.meta[i][0] >= 0}
        for dead in [i for i in self.genomes if i not in keep]:
            del self.genomes[dead]

    def chain(self, ind_id):
        """Ancestor ids from founder to `ind_id` inclusive."""
        chain = [ind_id]
        while True:
            parent = self.meta[chain[-1]][0]
            if parent < 0:
                break
            if parent not in self.meta:
                raise KeyError(f"archive truncated: missing ancestor {parent}")
            chain.append(parent)
        return chain[::-1]

    def mrca(self, final_ids):
        """Most recent common ancestor of the final population, or None if
        the lineages only meet before generation 0."""
        frontier = set(final_ids)
        while len(frontier) > 1:
            parents = {self.meta[i][0] for i in frontier}
            if -1 in parents:
                return None
            frontier = parents
        return next(iter(frontier)) if frontier else None


def _world_params(cfg):
    return dict(size=cfg.world_size, wall_p=cfg.wall_fraction,
                start_distance=cfg.start_distance, steps=cfg.steps,
                bonus=cfg.bonus)


def _eval_one(genome_bytes, seed, generation, index, cfg_tuple):
    """Worker task: evaluate one genome (picklable args only)."""
    (size, wall_p, start_distance, steps, bonus, gates) = cfg_tuple
    sites = np.frombuffer(genome_bytes, dtype=np.uint8)
    pack = engine.pack_genome(sites, GATE_SETS[gates])
    rngs = trial_streams(seed, generation, index)
    res = engine.evaluate_pack(pack, rngs, size=size, wall_p=wall_p,
                               start_distance=start_distance, steps=steps,
                               bonus=bonus)
    return (index, res.log_w, res.w,
            [t.goal_reaches for t in res.trials],
            res.action_totals, pack.gate_counts())


def evaluate_population(pop, cfg, generation, pool=None):
    """Fill in fitness and summaries for every individual.  Results depend
    only on (seed, generation, index), never on the pool width."""
    cfg_tuple = (cfg.world_size, cfg.wall_fraction, cfg.start_distance,
                 cfg.steps, cfg.bonus, cfg.gates)
    args = [(ind.genome.tobytes(), cfg.seed, generation, i, cfg_tuple)
            for i, ind in enumerate(pop)]
    if pool is None:
        results = [_eval_one(*a) for a in args]
    else:
        results = list(pool.map(_eval_one_star, args, chunksize=max(1, len(args) // 16)))
    for index, log_w, w, goals, actions, gate_counts in results:
        ind = pop[index]
        ind.fitness_log = log_w
        ind.w = w
        ind.goals_per_mapping = goals
        ind.action_totals = actions
        ind.gate_counts = gate_counts
    return pop


def _eval_one_star(a):
    return _eval_one(*a)


def tournament_select(pop, k, rng):
    """Best-of-k with replacement; ties broken uniformly among the drawn
    tied maxima."""
    drawn = [pop[randint(rng, len(pop))] for _ in range(k)]
    best = max(ind.fitness_log for ind in drawn)
    tied = [ind for ind in drawn if ind.fitness_log == best]
    return tied[0] if len(tied) == 1 else tied[randint(rng, len(tied))]


def founders(cfg):
    pop = []
    for j in range(cfg.population):
        rng = substream(cfg.seed, 0, j, 0, TAG_FOUNDER)
        sites = genome_mod.random_genome(cfg.init_length, cfg.init_codons, rng,
                                         kinds=cfg.gate_kinds)
        pop.append(Individual(id=j, parent_id=-1, generation=0, genome=sites))
    return pop


def next_generation(pop, cfg, child_generation):
    """Tournament-select and mutate one parent per offspring slot."""
    children = []
    for j in range(cfg.population):
        rng = substream(cfg.seed, child_generation, j, 0, TAG_REPRO)
        parent = tournament_select(pop, cfg.tournament_size, rng)
        child = genome_mod.mutate(parent.genome, rng,
                                  point_rate=cfg.point_rate,
                                  dup_rate=cfg.dup_rate, del_rate=cfg.del_rate,
                                  min_length=cfg.min_length,
                                  max_length=cfg.max_length)
        children.append(Individual(id=child_generation * cfg.population + j,
                                   parent_id=parent.id,
                                   generation=child_generation, genome=child))
    return children


def _stats_row(generation, pop):
    logs = np.array([i.fitness_log for i in pop])
    goals = np.array([i.mean_goals for i in pop])
    total_goals = np.array([i.total_goals for i in pop])
    gate = np.array([i.gate_counts for i in pop], dtype=float)
    acts = np.array([i.action_totals for i in pop], dtype=float)
    steps_total = acts.sum()
    forward = acts[:, engine.ACT_FORWARD].sum() / steps_total
    turn = (acts[:, engine.ACT_LEFT] + acts[:, engine.ACT_RIGHT]).sum() / steps_total
    nothing = acts[:, engine.ACT_NOTHING].sum() / steps_total
    return (generation, logs.max(), logs.mean(), goals.mean(),
            float((total_goals == 0).mean()), gate[:, 0].mean(),
            gate[:, 1].mean(), gate[:, 2].mean(), forward, turn, nothing)


def _format_stats_row(row):
    out = [str(row[0])]
    out += [f"{v:.9g}" for v in row[1:]]
    return ",".join(out)


def trace_lod(archive, final_pop, rng):
    """Random final individual's line of descent (founder first) and the
    most recent common ancestor of the final population."""
    anchor = final_pop[randint(rng, len(final_pop))]
    chain = archive.chain(anchor.id)
    records = []
    for ind_id in chain:
        parent_id, generation, fitness_log, mean_goals, gate_counts = archive.meta[ind_id]
        records.append({
            "id": ind_id,
            "parent_id": parent_id,
            "generation": generation,
            "log_w": fitness_log,
            "mean_goals": mean_goals,
            "n_det": gate_counts[0],
            "n_prob": gate_counts[1],
            "n_fb": gate_counts[2],
            "genome_hex": genome_mod.genome_to_hex(archive.genomes[ind_id]),
        })
    return records, archive.mrca([i.id for i in final_pop])


class RunDirectory:
    """Filesystem layout of one run."""

    def __init__(self, path):
        self.path = path
        self.config = os.path.join(path, "config.txt")
        self.stats = os.path.join(path, "stats.csv")
        self.lod = os.path.join(path, "lod.jsonl")
        self.ancestry = os.path.join(path, "ancestry.csv")

    def snapshot(self, generation):
        return os.path.join(self.path, f"genomes_gen{generation:06d}.txt")


def run_evolution(cfg, out_dir):
    """Execute a full run and persist stats, ancestry, genome snapshots and
    the line of descent.  Returns the RunDirectory."""
    run = RunDirectory(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    with open(run.config, "w") as fh:
        fh.write(f"# seed={cfg.seed}\n" + cfg.to_text())

    pool = None
    if cfg.workers > 1:
        pool = ProcessPoolExecutor(max_workers=cfg.workers)
    archive = Ancestry()
    try:
        with open(run.stats, "w") as stats_fh, open(run.ancestry, "w") as anc_fh:
            stats_fh.write(f"# seed={cfg.seed}\n")
            stats_fh.write(",".join(STATS_COLUMNS) + "\n")
            anc_fh.write(f"# seed={cfg.seed}\n")
            anc_fh.write("id,parent_id,generation,fitness_log,mean_goals\n")

            pop = founders(cfg)
            for gen in range(cfg.generations + 1):
                if gen > 0:
                    pop = next_generation(pop, cfg, gen)
                evaluate_population(pop, cfg, gen, pool=pool)
                for ind in pop:
                    archive.add(ind)
                    anc_fh.write(f"{ind.id},{ind.parent_id},{ind.generation},"
                                 f"{ind.fitness_log:.9g},{ind.mean_goals:.9g}\n")
                stats_fh.write(_format_stats_row(_stats_row(gen, pop)) + "\n")
                if gen % 25 == 0:
                    archive.prune([i.id for i in pop])
                if cfg.snapshot_interval and gen % cfg.snapshot_interval == 0:
                    genome_mod.write_snapshot(
                        run.snapshot(gen),
                        [(i.id, i.parent_id, i.generation, i.genome) for i in pop],
                        cfg.seed)
    finally:
        if pool is not None:
            pool.shutdown()

    lod_rng = substream(cfg.seed, cfg.generations, 0, 0, TAG_LOD)
    records, mrca = trace_lod(archive, pop, lod_rng)
    with open(run.lod, "w") as fh:
        fh.write(f"# seed={cfg.seed} mrca={mrca if mrca is not None else -1}\n")
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    genome_mod.write_snapshot(
        run.snapshot(cfg.generations),
        [(i.id, i.parent_id, i.generation, i.genome) for i in pop], cfg.seed)
    return run


def read_lod(path):
    """Parse lod.jsonl; returns (records, mrca_id_or_None)."""
    records = []
    mrca = None
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    if tok.startswith("mrca="):
                        v = int(tok.split("=", 1)[1])
                        mrca = None if v < 0 else v
                continue
            records.append(json.loads(line))
    return records, mrca


def read_stats(path):
    """Parse stats.csv into a dict of numpy columns."""
    rows = []
    with open(path) as fh:
        header = None
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line.split(",")
                continue
            rows.append([float(v) for v in line.split(",")])
    data = np.array(rows)
    return {name: data[:, i] for i, name in enumerate(header)}
