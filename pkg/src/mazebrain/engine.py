"""Jitted execution engine.

Flattens a genome into plain arrays and runs whole fitness trials (world
generation, agent embodiment, gate network updates, feedback learning)
inside numba-compiled kernels.  The pure-Python object model in `gates`,
`brain`, and `world` implements identical semantics; the two paths are
cross-checked bit-for-bit in the test suite.

All integer draws use floor(u * n) on a single uniform so the reference
path and the kernels consume the same stream positions.
"""

import itertools
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numba import njit

P_MIN = 0.01
P_MAX = 0.99

KIND_DET = 0
KIND_PROB = 1
KIND_FB = 2

N_NODES = 16

# headings N,E,S,W = 0..3; north is decreasing row index
DROW = np.array([-1, 0, 1, 0], dtype=np.int64)
DCOL = np.array([0, 1, 0, -1], dtype=np.int64)

# actions, in the order the 24 mappings permute
ACT_FORWARD = 0
ACT_LEFT = 1
ACT_RIGHT = 2
ACT_NOTHING = 3

# the 24 option-to-action mappings, lexicographic over (forward, left, right, nothing)
MAPPINGS = np.array(list(itertools.permutations(range(4))), dtype=np.int64)

INF_DIST = np.int32(1 << 30)


# ---------------------------------------------------------------------------
# probability-row renormalization
# ---------------------------------------------------------------------------

@njit(cache=True)
def _scale_clip(vals, n, total, bps):
    """Rescale vals[:n] in place to clip(lam * vals, P_MIN, P_MAX) with the
    unique lam making the sum equal `total` (clamped to the feasible range).

    Exact solve over the piecewise-linear breakpoints; no iteration-to-
    convergence, so row sums land at float precision.  `bps` is scratch of
    length >= 2n.
    """
    lo = P_MIN
    hi = P_MAX
    if total < n * lo:
        total = n * lo
    if total > n * hi:
        total = n * hi
    for j in range(n):
        if vals[j] < 1e-12:
            vals[j] = 1e-12
    # fast path: plain proportional rescale keeps everything in bounds
    s = 0.0
    for j in range(n):
        s += vals[j]
    lam0 = total / s
    ok = True
    for j in range(n):
        x = lam0 * vals[j]
        if x < lo or x > hi:
            ok = False
            break
    if ok:
        for j in range(n):
            vals[j] = lam0 * vals[j]
        return
    # active-set iteration: pin clipped entries at a bound, rescale the rest;
    # nearly always settles in a pass or two.  bps[:n] doubles as pin flags
    # (0 free, 1 low, 2 high) until the breakpoint fallback overwrites it.
    for j in range(n):
        bps[j] = 0.0
    lam = lam0
    settled = False
    for _ in range(n):
        changed = False
        for j in range(n):
            if bps[j] == 0.0:
                x = lam * vals[j]
                if x < lo:
                    bps[j] = 1.0
                    changed = True
                elif x > hi:
                    bps[j] = 2.0
                    changed = True
        if not changed:
            settled = True
            break
        base = 0.0
        sfree = 0.0
        for j in range(n):
            if bps[j] == 1.0:
                base += lo
            elif bps[j] == 2.0:
                base += hi
            else:
                sfree += vals[j]
        if sfree <= 0.0:
            break
        lam = (total - base) / sfree
    if settled:
        # a pinned entry must still hug its bound at the final lam; if the
        # pins overshot, fall through to the exact solve
        good = True
        for j in range(n):
            x = lam * vals[j]
            if bps[j] == 1.0:
                if x > lo:
                    good = False
                    break
            elif bps[j] == 2.0:
                if x < hi:
                    good = False
                    break
        if good:
            for j in range(n):
                if bps[j] == 1.0:
                    vals[j] = lo
                elif bps[j] == 2.0:
                    vals[j] = hi
                else:
                    vals[j] = lam * vals[j]
            return
    for j in range(n):
        bps[j] = lo / vals[j]
        bps[n + j] = hi / vals[j]
    # insertion sort; 2n <= 32
    for a in range(1, 2 * n):
        key = bps[a]
        b = a - 1
        while b >= 0 and bps[b] > key:
            bps[b + 1] = bps[b]
            b -= 1
        bps[b + 1] = key
    # smallest breakpoint with clipped sum >= total (binary search; the
    # clipped sum is nondecreasing in lam)
    kk = -1
    lo_i = 0
    hi_i = 2 * n - 1
    while lo_i <= hi_i:
        m = (lo_i + hi_i) // 2
        lam = bps[m]
        f = 0.0
        for j in range(n):
            x = lam * vals[j]
            if x < lo:
                x = lo
            elif x > hi:
                x = hi
            f += x
        if f >= total:
            kk = m
            hi_i = m - 1
        else:
            lo_i = m + 1
    if kk < 0:
        for j in range(n):
            vals[j] = hi
        return
    lo_lam = bps[kk - 1] if kk > 0 else 0.0
    hi_lam = bps[kk]
    mid = 0.5 * (lo_lam + hi_lam)
    nlo = 0
    nhi = 0
    sfree = 0.0
    for j in range(n):
        x = mid * vals[j]
        if x <= lo:
            nlo += 1
        elif x >= hi:
            nhi += 1
        else:
            sfree += vals[j]
    if sfree > 0.0:
        lam = (total - nlo * lo - nhi * hi) / sfree
        if lam < lo_lam:
            lam = lo_lam
        if lam > hi_lam:
            lam = hi_lam
    else:
        lam = mid
    for j in range(n):
        x = lam * vals[j]
        if x < lo:
            x = lo
        elif x > hi:
            x = hi
        vals[j] = x


@njit(cache=True)
def _renorm_row(ptab, base, n_cols, targeted, vals, cols, bps):
    """Clamp the targeted entries of one row to [P_MIN, P_MAX], then rescale
    the untouched entries so the row sums to 1.  If holding the targeted
    entries fixed is infeasible (their clamped sum leaves the free entries
    no valid share), the whole row is rescaled instead.

    `vals`, `cols`, `bps` are scratch of lengths >= 16, 16, 32.
    """
    tsum = 0.0
    nt = 0
    for c in range(n_cols):
        if targeted[c]:
            v = ptab[base + c]
            if v < P_MIN:
                v = P_MIN
            elif v > P_MAX:
                v = P_MAX
            ptab[base + c] = v
            tsum += v
            nt += 1
    nf = n_cols - nt
    resid = 1.0 - tsum
    if nf == 0 or resid < nf * P_MIN - 1e-12 or resid > nf * P_MAX + 1e-12:
        for c in range(n_cols):
            vals[c] = ptab[base + c]
        _scale_clip(vals, n_cols, 1.0, bps)
        for c in range(n_cols):
            ptab[base + c] = vals[c]
        return
    # scale the free entries in place; any entry the scaling would push
    # under the floor gets pinned there and the rest rescaled.  The residual
    # never exceeds 0.99 (at least one clamped targeted entry), so no upper
    # clamp is needed here.  cols[] doubles as the free flags.
    for c in range(n_cols):
        cols[c] = 0 if targeted[c] else 1
    for _ in range(10):
        fsum = 0.0
        for c in range(n_cols):
            if cols[c] != 0:
                fsum += ptab[base + c]
        if fsum <= 0.0:
            break
        s = resid / fsum
        bad = False
        for c in range(n_cols):
            if cols[c] != 0 and ptab[base + c] * s < P_MIN:
                cols[c] = 0
                ptab[base + c] = P_MIN
                resid -= P_MIN
                bad = True
        if not bad:
            for c in range(n_cols):
                if cols[c] != 0:
                    ptab[base + c] *= s
            return
    # pathological row: exact solve over the free entries
    resid = 1.0 - tsum
    m = 0
    for c in range(n_cols):
        if not targeted[c]:
            vals[m] = ptab[base + c]
            cols[m] = c
            m += 1
    _scale_clip(vals, m, resid, bps)
    for j in range(m):
        ptab[base + cols[j]] = vals[j]


@njit(cache=True)
def _apply_feedback(ptab, off, n_cols, bufi, bufo, buflen, deltas, sign, rng,
                    rows, masks, vals, cols, bps):
    """One feedback application: adjust every buffered (row, col) entry by a
    fresh uniform step scaled by that slot's delta (newest slot first), then
    renormalize each touched row once.

    The last five arguments are scratch: int64[4], uint8[4,16], float64[16],
    int64[16], float64[32].
    """
    if buflen == 0:
        return
    n_rows = 0
    for k in range(buflen):
        i = bufi[k]
        o = bufo[k]
        u = rng.random() * deltas[k]
        ptab[off + i * n_cols + o] += sign * u
        slot = -1
        for t in range(n_rows):
            if rows[t] == i:
                slot = t
                break
        if slot < 0:
            slot = n_rows
            rows[slot] = i
            for c in range(n_cols):
                masks[slot, c] = 0
            n_rows += 1
        masks[slot, o] = 1
    for t in range(n_rows):
        _renorm_row(ptab, off + rows[t] * n_cols, n_cols, masks[t], vals, cols, bps)


# ---------------------------------------------------------------------------
# genome -> flat gate arrays
# ---------------------------------------------------------------------------

@njit(cache=True)
def _scan_codons(g, allow_det, allow_prob, allow_fb):
    L = g.shape[0]
    kinds = np.empty(L, np.int8)
    starts = np.empty(L, np.int64)
    n = 0
    for i in range(L):
        a = g[i]
        b = g[(i + 1) % L]
        k = -1
        if a == 42 and b == 213 and allow_det:
            k = KIND_DET
        elif a == 43 and b == 212 and allow_prob:
            k = KIND_PROB
        elif a == 44 and b == 211 and allow_fb:
            k = KIND_FB
        if k >= 0:
            kinds[n] = k
            starts[n] = i
            n += 1
    return kinds[:n].copy(), starts[:n].copy()


@njit(cache=True)
def _pack_arrays(g, kinds, starts):
    L = g.shape[0]
    G = kinds.shape[0]
    nins = np.zeros(G, np.int64)
    nouts = np.zeros(G, np.int64)
    ins = np.zeros((G, 4), np.int64)
    outs = np.zeros((G, 4), np.int64)
    off = np.zeros(G, np.int64)
    pos_src = np.zeros(G, np.int64)
    neg_src = np.zeros(G, np.int64)
    depth = np.zeros(G, np.int64)
    deltas = np.zeros((G, 4))
    tab_pos = np.zeros(G, np.int64)
    dsize = 0
    psize = 0
    for gi in range(G):
        p = starts[gi] + 2
        ni = 1 + g[p % L] % 4
        no = 1 + g[(p + 1) % L] % 4
        q = p + 2
        for j in range(ni):
            ins[gi, j] = g[q % L] % 16
            q += 1
        for j in range(no):
            outs[gi, j] = g[q % L] % 16
            q += 1
        if kinds[gi] == KIND_FB:
            pos_src[gi] = g[q % L] % 16
            neg_src[gi] = g[(q + 1) % L] % 16
            depth[gi] = 1 + g[(q + 2) % L] % 4
            for j in range(4):
                deltas[gi, j] = g[(q + 3 + j) % L] / 255.0 * 0.5
            q += 7
        nins[gi] = ni
        nouts[gi] = no
        tab_pos[gi] = q
        if kinds[gi] == KIND_DET:
            off[gi] = dsize
            dsize += 1 << ni
        else:
            off[gi] = psize
            psize += (1 << ni) * (1 << no)
    dtab = np.zeros(dsize, np.int64)
    ptab = np.zeros(psize, np.float64)
    for gi in range(G):
        q = tab_pos[gi]
        rows = 1 << nins[gi]
        cols = 1 << nouts[gi]
        if kinds[gi] == KIND_DET:
            for r in range(rows):
                dtab[off[gi] + r] = g[(q + r) % L] % cols
        else:
            for r in range(rows):
                s = 0.0
                base = q + r * cols
                for c in range(cols):
                    s += g[(base + c) % L] + 1.0
                for c in range(cols):
                    ptab[off[gi] + r * cols + c] = (g[(base + c) % L] + 1.0) / s
    return nins, nouts, ins, outs, off, dtab, ptab, pos_src, neg_src, depth, deltas


class BrainPack(NamedTuple):
    """A brain flattened into engine arrays; ptab holds the birth tables."""
    kind: np.ndarray
    nins: np.ndarray
    nouts: np.ndarray
    ins: np.ndarray
    outs: np.ndarray
    off: np.ndarray
    dtab: np.ndarray
    ptab: np.ndarray
    pos_src: np.ndarray
    neg_src: np.ndarray
    depth: np.ndarray
    deltas: np.ndarray

    @property
    def n_gates(self):
        return len(self.kind)

    def gate_counts(self):
        k = self.kind
        return (int((k == KIND_DET).sum()), int((k == KIND_PROB).sum()),
                int((k == KIND_FB).sum()))

    def fb_table_slices(self):
        """(gate index, offset, rows, cols) for every feedback gate."""
        out = []
        for gi in range(self.n_gates):
            if self.kind[gi] == KIND_FB:
                out.append((gi, int(self.off[gi]), 1 << int(self.nins[gi]),
                            1 << int(self.nouts[gi])))
        return out


def pack_genome(sites, kinds=("deterministic", "probabilistic", "feedback")):
    """Scan + decode a genome into a BrainPack."""
    g = np.ascontiguousarray(sites, dtype=np.uint8)
    ks, starts = _scan_codons(g, "deterministic" in kinds, "probabilistic" in kinds,
                              "feedback" in kinds)
    arrays = _pack_arrays(g, ks, starts)
    return BrainPack(ks.astype(np.int64), *arrays)


# ---------------------------------------------------------------------------
# trial kernel
# ---------------------------------------------------------------------------

@njit(cache=True)
def _gen_world(rng, size, wall_p, start_distance,
               walls, dist, arrow, queue, open_idx, start_idx):
    """Generate one labeled world in place.  Regenerates until some open
    tile sits exactly `start_distance` from the goal.  Returns the number
    of valid start tiles (written to start_idx)."""
    while True:
        for r in range(size):
            for c in range(size):
                if r == 0 or c == 0 or r == size - 1 or c == size - 1:
                    walls[r, c] = 1
                else:
                    walls[r, c] = 0
        for r in range(1, size - 1):
            for c in range(1, size - 1):
                if rng.random() < wall_p:
                    walls[r, c] = 1
        n_open = 0
        for r in range(size):
            for c in range(size):
                if walls[r, c] == 0:
                    open_idx[n_open] = r * size + c
                    n_open += 1
        if n_open == 0:
            continue
        gsel = int(rng.random() * n_open)
        if gsel >= n_open:
            gsel = n_open - 1
        goal = open_idx[gsel]
        # unit-cost shortest paths from the goal (BFS == Dijkstra here)
        for r in range(size):
            for c in range(size):
                dist[r, c] = INF_DIST
        gr = goal // size
        gc = goal % size
        dist[gr, gc] = 0
        head = 0
        tail = 0
        queue[tail] = goal
        tail += 1
        while head < tail:
            t = queue[head]
            head += 1
            r = t // size
            c = t % size
            d = dist[r, c] + 1
            for k in range(4):
                nr = r + DROW[k]
                nc = c + DCOL[k]
                if 0 <= nr < size and 0 <= nc < size and walls[nr, nc] == 0 and dist[nr, nc] > d:
                    dist[nr, nc] = d
                    queue[tail] = nr * size + nc
                    tail += 1
        n_start = 0
        for r in range(size):
            for c in range(size):
                if walls[r, c] == 0 and dist[r, c] == start_distance:
                    start_idx[n_start] = r * size + c
                    n_start += 1
        if n_start > 0:
            break
    # arrows: point to a uniformly chosen neighbor one step closer
    cand = np.empty(4, np.int64)
    for r in range(size):
        for c in range(size):
            arrow[r, c] = -1
            if walls[r, c] != 0:
                continue
            d = dist[r, c]
            if d == 0 or d >= INF_DIST:
                continue
            k = 0
            for dirn in range(4):
                nr = r + DROW[dirn]
                nc = c + DCOL[dirn]
                if 0 <= nr < size and 0 <= nc < size and dist[nr, nc] == d - 1:
                    cand[k] = dirn
                    k += 1
            sel = int(rng.random() * k)
            if sel >= k:
                sel = k - 1
            arrow[r, c] = cand[sel]
    return n_start


@njit(cache=True)
def _run_trial(kind, nins, nouts, ins, outs, off, dtab, ptab_birth,
               pos_src, neg_src, depth, deltas,
               perm, size, wall_p, start_distance, steps, frozen,
               ptab, bufi, bufo, buflen, nodes, rd, nxt,
               walls, dist, arrow, queue, open_idx, start_idx, counts,
               fb_rows, fb_masks, rr_vals, rr_cols, rr_bps, rng):
    """One 'lifetime' on one mapping: fresh world, fresh brain state,
    `steps` world updates.  Returns (shaped score, goal count)."""
    G = kind.shape[0]
    for i in range(ptab.shape[0]):
        ptab[i] = ptab_birth[i]
    for gi in range(G):
        buflen[gi] = 0
    for i in range(N_NODES):
        nodes[i] = 0
    for a in range(4):
        counts[a] = 0

    n_start = _gen_world(rng, size, wall_p, start_distance,
                         walls, dist, arrow, queue, open_idx, start_idx)
    sel = int(rng.random() * n_start)
    if sel >= n_start:
        sel = n_start - 1
    ar = start_idx[sel] // size
    ac = start_idx[sel] % size
    ah = int(rng.random() * 4)
    if ah >= 4:
        ah = 3

    score = 0.0
    goals = 0
    for _ in range(steps):
        # sensors: one-hot arrow direction relative to heading
        rel = (arrow[ar, ac] - ah) % 4
        nodes[0] = 1 if rel == 0 else 0
        nodes[1] = 1 if rel == 1 else 0
        nodes[2] = 1 if rel == 2 else 0
        nodes[3] = 1 if rel == 3 else 0
        for i in range(N_NODES):
            rd[i] = nodes[i]
            nxt[i] = 0
        for gi in range(G):
            pattern = 0
            for j in range(nins[gi]):
                if rd[ins[gi, j]] != 0:
                    pattern |= 1 << j
            if kind[gi] == KIND_DET:
                outp = dtab[off[gi] + pattern]
            else:
                cols = 1 << nouts[gi]
                if kind[gi] == KIND_FB and frozen == 0:
                    if rd[pos_src[gi]] != 0:
                        _apply_feedback(ptab, off[gi], cols, bufi[gi], bufo[gi],
                                        buflen[gi], deltas[gi], 1.0, rng,
                                        fb_rows, fb_masks, rr_vals, rr_cols, rr_bps)
                    if rd[neg_src[gi]] != 0:
                        _apply_feedback(ptab, off[gi], cols, bufi[gi], bufo[gi],
                                        buflen[gi], deltas[gi], -1.0, rng,
                                        fb_rows, fb_masks, rr_vals, rr_cols, rr_bps)
                base = off[gi] + pattern * cols
                rr = rng.random()
                outp = cols - 1
                cum = 0.0
                for c in range(cols):
                    cum += ptab[base + c]
                    if rr < cum:
                        outp = c
                        break
                if kind[gi] == KIND_FB:
                    ln = buflen[gi]
                    if ln < depth[gi]:
                        ln += 1
                        buflen[gi] = ln
                    for k in range(ln - 1, 0, -1):
                        bufi[gi, k] = bufi[gi, k - 1]
                        bufo[gi, k] = bufo[gi, k - 1]
                    bufi[gi, 0] = pattern
                    bufo[gi, 0] = outp
            for j in range(nouts[gi]):
                if (outp >> j) & 1:
                    nxt[outs[gi, j]] = 1
        for i in range(N_NODES):
            nodes[i] = nxt[i]
        option = nodes[4] * 2 + nodes[5]
        act = perm[option]
        counts[act] += 1
        if act == ACT_FORWARD:
            nr = ar + DROW[ah]
            nc = ac + DCOL[ah]
            if walls[nr, nc] == 0:
                ar = nr
                ac = nc
        elif act == ACT_LEFT:
            ah = (ah + 3) % 4
        elif act == ACT_RIGHT:
            ah = (ah + 1) % 4
        d = dist[ar, ac]
        score += 1.0 / (1.0 + d)
        if d == 0:
            goals += 1
            sel = int(rng.random() * n_start)
            if sel >= n_start:
                sel = n_start - 1
            ar = start_idx[sel] // size
            ac = start_idx[sel] % size
            ah = int(rng.random() * 4)
            if ah >= 4:
                ah = 3
    return score, goals


# ---------------------------------------------------------------------------
# Python-level wrappers
# ---------------------------------------------------------------------------

class Scratch:
    """Reusable per-evaluation work arrays."""

    def __init__(self, pack, size):
        G = max(pack.n_gates, 1)
        self.ptab = np.zeros(max(len(pack.ptab), 1), np.float64)
        self.bufi = np.zeros((G, 4), np.int64)
        self.bufo = np.zeros((G, 4), np.int64)
        self.buflen = np.zeros(G, np.int64)
        self.nodes = np.zeros(N_NODES, np.uint8)
        self.rd = np.zeros(N_NODES, np.uint8)
        self.nxt = np.zeros(N_NODES, np.uint8)
        self.walls = np.zeros((size, size), np.uint8)
        self.dist = np.zeros((size, size), np.int32)
        self.arrow = np.zeros((size, size), np.int8)
        self.queue = np.zeros(size * size, np.int32)
        self.open_idx = np.zeros(size * size, np.int32)
        self.start_idx = np.zeros(size * size, np.int32)
        self.counts = np.zeros(4, np.int64)
        self.fb_rows = np.zeros(4, np.int64)
        self.fb_masks = np.zeros((4, 16), np.uint8)
        self.rr_vals = np.zeros(16, np.float64)
        self.rr_cols = np.zeros(16, np.int64)
        self.rr_bps = np.zeros(32, np.float64)


@dataclass
class TrialStats:
    mapping: int
    score: float
    goal_reaches: int
    action_counts: np.ndarray        # raw counts per action (forward, L, R, nothing)
    fb_end_tables: list | None = None  # per feedback gate, (rows, cols) arrays

    @property
    def forward(self):
        return int(self.action_counts[ACT_FORWARD])

    @property
    def turn(self):
        return int(self.action_counts[ACT_LEFT] + self.action_counts[ACT_RIGHT])

    @property
    def nothing(self):
        return int(self.action_counts[ACT_NOTHING])


@dataclass
class EvalResult:
    log_w: float
    w: float
    trials: list

    @property
    def total_goals(self):
        return sum(t.goal_reaches for t in self.trials)

    @property
    def mean_goals(self):
        return self.total_goals / len(self.trials)

    @property
    def action_totals(self):
        tot = np.zeros(4, np.int64)
        for t in self.trials:
            tot += t.action_counts
        return tot


def run_trial_fast(pack, mapping_index, rng, *, size, wall_p, start_distance,
                   steps, frozen=False, scratch=None, collect_tables=False):
    """Engine counterpart of world.run_trial (same stream consumption)."""
    if scratch is None:
        scratch = Scratch(pack, size)
    s = scratch
    perm = MAPPINGS[mapping_index]
    score, goals = _run_trial(
        pack.kind, pack.nins, pack.nouts, pack.ins, pack.outs, pack.off,
        pack.dtab, pack.ptab, pack.pos_src, pack.neg_src, pack.depth,
        pack.deltas, perm, size, wall_p, start_distance, steps,
        1 if frozen else 0,
        s.ptab, s.bufi, s.bufo, s.buflen, s.nodes, s.rd, s.nxt,
        s.walls, s.dist, s.arrow, s.queue, s.open_idx, s.start_idx,
        s.counts, s.fb_rows, s.fb_masks, s.rr_vals, s.rr_cols, s.rr_bps, rng)
    tables = None
    if collect_tables:
        tables = [s.ptab[o:o + r * c].reshape(r, c).copy()
                  for _, o, r, c in pack.fb_table_slices()]
    return TrialStats(mapping=mapping_index, score=score, goal_reaches=goals,
                      action_counts=s.counts.copy(), fb_end_tables=tables)


def evaluate_pack(pack, rngs, *, size, wall_p, start_distance, steps, bonus,
                  frozen=False, collect_tables=False, scratch=None):
    """Full fitness evaluation: one trial per mapping, product fitness
    accumulated in log space."""
    if scratch is None:
        scratch = Scratch(pack, size)
    trials = []
    log_w = 0.0
    for m, rng in enumerate(rngs):
        t = run_trial_fast(pack, m, rng, size=size, wall_p=wall_p,
                           start_distance=start_distance, steps=steps,
                           frozen=frozen, scratch=scratch,
                           collect_tables=collect_tables)
        log_w += np.log(t.score + bonus * t.goal_reaches)
        trials.append(t)
    return EvalResult(log_w=float(log_w), w=float(np.exp(log_w)), trials=trials)
