"""Maze worlds, agent embodiment, and fitness evaluation (reference path).

A world is a square grid with border walls, random interior walls, one goal
tile, a shortest-path distance field, and per-tile arrows pointing one step
closer to the goal.  Agents perceive the arrow of their tile relative to
their heading and act through one of the 24 option-to-action mappings.

This module consumes random streams in exactly the same order as the jitted
engine so the two can be cross-checked bit for bit.
"""

import heapq
from dataclasses import dataclass, field

import numpy as np

from . import brain as brain_mod
from .engine import (ACT_FORWARD, ACT_LEFT, ACT_NOTHING, ACT_RIGHT, DCOL,
                     DROW, INF_DIST, MAPPINGS)
from .gates import table_mutual_information
from .rngstream import randint

N_MAPPINGS = len(MAPPINGS)

WORLD_SIZE = 64
WALL_FRACTION = 1.0 / 7.0
START_DISTANCE = 32
TRIAL_STEPS = 512
GOAL_BONUS = 512.0

ARROW_CHARS = "^>v<"


@dataclass
class World:
    walls: np.ndarray      # uint8 (size, size), 1 = wall
    dist: np.ndarray       # int32 shortest-path distance to goal, INF_DIST if unreachable
    arrow: np.ndarray      # int8 absolute direction 0..3, -1 where unlabeled
    goal: tuple
    start_tiles: list      # open tiles at exactly the start distance

    @property
    def size(self):
        return self.walls.shape[0]


@dataclass
class AgentState:
    row: int
    col: int
    heading: int           # 0..3 = N,E,S,W


@dataclass
class TrialResult:
    mapping: int
    score: float
    goal_reaches: int
    action_counts: np.ndarray
    fb_birth_tables: list = field(default_factory=list)
    fb_end_tables: list = field(default_factory=list)

    @property
    def forward(self):
        return int(self.action_counts[ACT_FORWARD])

    @property
    def turn(self):
        return int(self.action_counts[ACT_LEFT] + self.action_counts[ACT_RIGHT])

    @property
    def nothing(self):
        return int(self.action_counts[ACT_NOTHING])


def dijkstra_distances(walls, goal):
    """Unit-cost shortest-path distance from every open tile to the goal
    (4-connected).  Unreachable open tiles and walls get INF_DIST."""
    size_r, size_c = walls.shape
    if walls[goal]:
        raise ValueError("goal must be an open tile")
    dist = np.full(walls.shape, INF_DIST, dtype=np.int32)
    dist[goal] = 0
    heap = [(0, goal)]
    while heap:
        d, (r, c) = heapq.heappop(heap)
        if d > dist[r, c]:
            continue
        for k in range(4):
            nr, nc = r + int(DROW[k]), c + int(DCOL[k])
            if 0 <= nr < size_r and 0 <= nc < size_c and not walls[nr, nc] \
                    and d + 1 < dist[nr, nc]:
                dist[nr, nc] = d + 1
                heapq.heappush(heap, (d + 1, (nr, nc)))
    return dist


def generate_world(rng, size=WORLD_SIZE, wall_p=WALL_FRACTION,
                   start_distance=START_DISTANCE):
    """Border walls, random interior walls, random goal, distance field and
    arrows.  Regenerates until an open tile at exactly `start_distance`
    exists."""
    while True:
        walls = np.zeros((size, size), dtype=np.uint8)
        walls[0, :] = walls[-1, :] = walls[:, 0] = walls[:, -1] = 1
        for r in range(1, size - 1):
            for c in range(1, size - 1):
                if rng.random() < wall_p:
                    walls[r, c] = 1
        open_tiles = [(r, c) for r in range(size) for c in range(size) if not walls[r, c]]
        if not open_tiles:
            continue
        goal = open_tiles[randint(rng, len(open_tiles))]
        dist = dijkstra_distances(walls, goal)
        start_tiles = [(r, c) for (r, c) in open_tiles if dist[r, c] == start_distance]
        if start_tiles:
            break
    arrow = np.full((size, size), -1, dtype=np.int8)
    for r in range(size):
        for c in range(size):
            if walls[r, c]:
                continue
            d = dist[r, c]
            if d == 0 or d >= INF_DIST:
                continue
            cand = [k for k in range(4)
                    if dist[r + int(DROW[k]), c + int(DCOL[k])] == d - 1]
            arrow[r, c] = cand[randint(rng, len(cand))]
    return World(walls=walls, dist=dist, arrow=arrow, goal=goal,
                 start_tiles=start_tiles)


def perceive(world, agent):
    """One-hot sensors over (forward, right, backward, left)."""
    rel = (int(world.arrow[agent.row, agent.col]) - agent.heading) % 4
    return tuple(1 if k == rel else 0 for k in range(4))


def apply_action(world, agent, action):
    row, col, heading = agent.row, agent.col, agent.heading
    if action == ACT_FORWARD:
        nr, nc = row + int(DROW[heading]), col + int(DCOL[heading])
        if not world.walls[nr, nc]:
            row, col = nr, nc
    elif action == ACT_LEFT:
        heading = (heading + 3) % 4
    elif action == ACT_RIGHT:
        heading = (heading + 1) % 4
    return AgentState(row=row, col=col, heading=heading)


def _place(world, rng):
    r, c = world.start_tiles[randint(rng, len(world.start_tiles))]
    return AgentState(row=r, col=c, heading=randint(rng, 4))


def run_trial(brain, mapping_index, rng, *, size=WORLD_SIZE,
              wall_p=WALL_FRACTION, start_distance=START_DISTANCE,
              steps=TRIAL_STEPS, trace=None, generation=-1):
    """One lifetime on one mapping: fresh world, `steps` updates, shaped
    reward 1/(1+d) per step, re-placement on every goal completion.

    The brain must be freshly reset; its feedback state persists across goal
    re-placements within the trial.  `trace`, if given, collects one replay
    record per step.
    """
    brain_mod.reset(brain)
    birth_tables = [g.table.copy() for g in brain.feedback_gates]
    perm = MAPPINGS[mapping_index]
    world = generate_world(rng, size=size, wall_p=wall_p,
                           start_distance=start_distance)
    agent = _place(world, rng)
    score = 0.0
    goals = 0
    counts = np.zeros(4, dtype=np.int64)
    for t in range(steps):
        sensors = perceive(world, agent)
        out = brain_mod.step(brain, sensors, rng)
        option = out[0] * 2 + out[1]
        action = int(perm[option])
        counts[action] += 1
        agent = apply_action(world, agent, action)
        if trace is not None:
            trace.append((generation, mapping_index, t, *sensors, *out,
                          agent.row, agent.col, agent.heading))
        d = int(world.dist[agent.row, agent.col])
        score += 1.0 / (1.0 + d)
        if d == 0:
            goals += 1
            agent = _place(world, rng)
    return TrialResult(mapping=mapping_index, score=score, goal_reaches=goals,
                       action_counts=counts,
                       fb_birth_tables=birth_tables,
                       fb_end_tables=[g.table.copy() for g in brain.feedback_gates])


def fitness(brain, rngs, *, size=WORLD_SIZE, wall_p=WALL_FRACTION,
            start_distance=START_DISTANCE, steps=TRIAL_STEPS,
            bonus=GOAL_BONUS, mapping_order=None):
    """Product fitness over all 24 mappings, accumulated in log space.

    `rngs` holds one generator per mapping, so the product is independent of
    evaluation order.  Returns (log_w, w, per-mapping TrialResults in
    mapping order).
    """
    order = range(N_MAPPINGS) if mapping_order is None else mapping_order
    results = {}
    log_w = 0.0
    for m in order:
        t = run_trial(brain, m, rngs[m], size=size, wall_p=wall_p,
                      start_distance=start_distance, steps=steps)
        log_w += np.log(t.score + bonus * t.goal_reaches)
        results[m] = t
    ordered = [results[m] for m in sorted(results)]
    return float(log_w), float(np.exp(log_w)), ordered


def mi_deltas(trial_results):
    """Per-trial mean change in feedback-table mutual information."""
    out = []
    for t in trial_results:
        if t.fb_birth_tables:
            out.append(float(np.mean([
                table_mutual_information(e) - table_mutual_information(b)
                for b, e in zip(t.fb_birth_tables, t.fb_end_tables)])))
    return out


def render_world(world):
    """Text dump: '#' wall, 'G' goal, arrows '^>v<', '.' unlabeled open."""
    rows = []
    for r in range(world.size):
        line = []
        for c in range(world.size):
            if world.walls[r, c]:
                line.append("#")
            elif (r, c) == tuple(world.goal):
                line.append("G")
            elif world.arrow[r, c] >= 0:
                line.append(ARROW_CHARS[world.arrow[r, c]])
            else:
                line.append(".")
        rows.append("".join(line))
    return "\n".join(rows)
