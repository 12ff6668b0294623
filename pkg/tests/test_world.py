from collections import deque

import numpy as np
import pytest

from mazebrain import world as W
from mazebrain.brain import Brain
from mazebrain.gates import DeterministicGate
from mazebrain.rngstream import substream, trial_streams


def bfs_oracle(walls, goal):
    """Independent shortest-path oracle (plain queue BFS)."""
    size = walls.shape[0]
    dist = np.full((size, size), W.INF_DIST, dtype=np.int64)
    gr, gc = goal
    dist[gr, gc] = 0
    q = deque([goal])
    while q:
        r, c = q.popleft()
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            nr, nc = r + dr, c + dc
            if 0 <= nr < size and 0 <= nc < size and not walls[nr, nc] \
                    and dist[nr, nc] > dist[r, c] + 1:
                dist[nr, nc] = dist[r, c] + 1
                q.append((nr, nc))
    return dist


def test_distance_field_matches_bfs_oracle():
    rng = np.random.default_rng(0)
    for trial in range(20):
        size = 16
        walls = (rng.random((size, size)) < 0.2).astype(np.uint8)
        walls[0, :] = walls[-1, :] = walls[:, 0] = walls[:, -1] = 1
        opens = np.argwhere(walls == 0)
        goal = tuple(opens[rng.integers(len(opens))])
        got = W.dijkstra_distances(walls, goal)
        want = bfs_oracle(walls, goal)
        assert np.array_equal(np.asarray(got, dtype=np.int64), want)


def test_generate_world_structure():
    rng = substream(1, 0, 0, 0, 3)
    w = W.generate_world(rng, size=32, start_distance=16)
    assert w.walls[0, :].all() and w.walls[-1, :].all()
    assert w.walls[:, 0].all() and w.walls[:, -1].all()
    assert w.dist[w.goal] == 0
    assert len(w.start_tiles) > 0
    for r, c in w.start_tiles:
        assert w.dist[r, c] == 16 and not w.walls[r, c]


def test_arrows_point_one_step_closer():
    rng = substream(2, 0, 0, 0, 3)
    w = W.generate_world(rng, size=32, start_distance=16)
    for r in range(32):
        for c in range(32):
            if w.walls[r, c] or w.dist[r, c] in (0, W.INF_DIST):
                continue
            a = int(w.arrow[r, c])
            nr, nc = r + W.DROW[a], c + W.DCOL[a]
            assert w.dist[nr, nc] == w.dist[r, c] - 1


def test_perceive_one_hot_relative_to_heading():
    rng = substream(3, 0, 0, 0, 3)
    w = W.generate_world(rng, size=32, start_distance=16)
    r, c = w.start_tiles[0]
    a = int(w.arrow[r, c])
    for heading in range(4):
        s = W.perceive(w, W.AgentState(r, c, heading))
        assert sum(s) == 1
        assert s[(a - heading) % 4] == 1


def test_apply_action_semantics():
    walls = np.ones((5, 5), dtype=np.uint8)
    walls[1:4, 1:4] = 0
    w = W.World(walls=walls, dist=bfs_oracle(walls, (1, 1)).astype(np.int32),
                arrow=np.zeros((5, 5), np.int8), goal=(1, 1), start_tiles=[(3, 3)])
    a = W.AgentState(2, 2, 0)
    a = W.apply_action(w, a, W.ACT_FORWARD)        # north
    assert (a.row, a.col) == (1, 2)
    a = W.apply_action(w, a, W.ACT_FORWARD)        # blocked by border
    assert (a.row, a.col) == (1, 2)
    a = W.apply_action(w, a, W.ACT_RIGHT)
    assert a.heading == 1
    a = W.apply_action(w, a, W.ACT_LEFT)
    a = W.apply_action(w, a, W.ACT_LEFT)
    assert a.heading == 3
    before = (a.row, a.col, a.heading)
    a = W.apply_action(w, a, W.ACT_NOTHING)
    assert (a.row, a.col, a.heading) == before


def still_brain():
    """Emits a constant option; never moves under the identity mapping."""
    return Brain([DeterministicGate(inputs=[0], outputs=[4, 5],
                                    table=np.array([3, 3]))])


def test_stationary_agent_score():
    # option 3 under mapping 0 (identity permutation) is 'do nothing';
    # the agent sits at distance 32 for all 512 steps
    rng = substream(4, 0, 0, 0, 3)
    t = W.run_trial(still_brain(), 0, rng)
    assert t.goal_reaches == 0
    assert t.nothing == 512 and t.forward == 0 and t.turn == 0
    assert t.score == pytest.approx(512 / 33, abs=1e-9)


def test_fitness_log_space_product():
    logw, w, results = W.fitness(still_brain(), trial_streams(4, 0, 0))
    per_map = [t.score + 512.0 * t.goal_reaches for t in results]
    assert logw == pytest.approx(sum(np.log(per_map)), abs=1e-9)
    assert len(results) == 24
    assert [t.mapping for t in results] == list(range(24))


def test_fitness_mapping_order_is_irrelevant():
    order = list(range(24))[::-1]
    a = W.fitness(still_brain(), trial_streams(5, 0, 0))
    b = W.fitness(still_brain(), trial_streams(5, 0, 0), mapping_order=order)
    assert a[0] == b[0]
    for ta, tb in zip(a[2], b[2]):
        assert ta.score == tb.score and ta.mapping == tb.mapping


def test_goal_reach_replaces_agent():
    """An oracle walker that always follows the arrow reaches the goal and
    is re-placed at the start distance."""
    rng = substream(6, 0, 0, 0, 3)
    w = W.generate_world(rng, size=32, start_distance=8)
    agent = W.AgentState(*w.start_tiles[0], 0)
    # follow arrows manually for at most 8 moves
    for _ in range(8):
        a = int(w.arrow[agent.row, agent.col])
        agent = W.AgentState(agent.row + W.DROW[a], agent.col + W.DCOL[a], 0)
    assert w.dist[agent.row, agent.col] == 0


def test_render_world_smoke():
    rng = substream(7, 0, 0, 0, 3)
    w = W.generate_world(rng, size=16, start_distance=6)
    text = W.render_world(w)
    lines = text.splitlines()
    assert len(lines) == 16
    assert set(lines[0]) == {"#"}
    assert "G" in text
