"""The three gate types: deterministic truth tables, probabilistic lookup
tables, and feedback gates that rewrite their own probability tables from
internally generated feedback.

The numeric core (entry adjustment + clamp-and-renormalize) is shared with
the jitted engine, so object-model evaluation and engine evaluation are
bit-identical given the same random stream.
"""

import copy
from dataclasses import dataclass, field

import numpy as np

from .engine import P_MIN, P_MAX, _apply_feedback as _apply_feedback_kernel

N_NODES = 16


@dataclass
class DeterministicGate:
    inputs: list
    outputs: list
    table: np.ndarray          # one output pattern per input pattern
    kind: str = "deterministic"


@dataclass
class ProbabilisticGate:
    inputs: list
    outputs: list
    table: np.ndarray          # (2^n_ins, 2^n_outs), rows sum to 1
    kind: str = "probabilistic"


@dataclass
class FeedbackGate:
    inputs: list
    outputs: list
    table: np.ndarray
    pos_src: int
    neg_src: int
    depth: int
    deltas: np.ndarray         # 4 step-size caps, one per buffer slot
    birth_table: np.ndarray = None
    buffer: list = field(default_factory=list)   # (row, col), newest first
    frozen: bool = False
    kind: str = "feedback"

    def __post_init__(self):
        if self.birth_table is None:
            self.birth_table = self.table.copy()


def decode_gate(span, n_nodes=N_NODES):
    """Decode a GeneSpan payload into a gate object.

    Header bytes, in order: n_ins, n_outs (1 + byte mod 4 each), the input
    addresses, the output addresses (byte mod 16), then for feedback gates
    pos_src, neg_src, depth (1 + byte mod 4) and four delta bytes scaled to
    [0, 0.5].  Probability rows use the (byte + 1) normalization so no entry
    is ever exactly zero.
    """
    p = np.asarray(span.payload, dtype=np.int64)
    n_ins = 1 + int(p[0]) % 4
    n_outs = 1 + int(p[1]) % 4
    q = 2
    inputs = [int(b) % n_nodes for b in p[q:q + n_ins]]
    q += n_ins
    outputs = [int(b) % n_nodes for b in p[q:q + n_outs]]
    q += n_outs
    rows = 1 << n_ins
    cols = 1 << n_outs
    if span.gate_kind == "deterministic":
        table = (p[q:q + rows] % cols).astype(np.int64)
        return DeterministicGate(inputs=inputs, outputs=outputs, table=table)
    extra = {}
    if span.gate_kind == "feedback":
        extra = dict(pos_src=int(p[q]) % n_nodes,
                     neg_src=int(p[q + 1]) % n_nodes,
                     depth=1 + int(p[q + 2]) % 4,
                     deltas=p[q + 3:q + 7] / 255.0 * 0.5)
        q += 7
    raw = p[q:q + rows * cols].reshape(rows, cols).astype(np.float64) + 1.0
    table = raw / raw.sum(axis=1, keepdims=True)
    if span.gate_kind == "feedback":
        return FeedbackGate(inputs=inputs, outputs=outputs, table=table, **extra)
    return ProbabilisticGate(inputs=inputs, outputs=outputs, table=table)


def eval_deterministic(gate, input_pattern):
    return int(gate.table[input_pattern])


def sample_row(row, rng):
    """Inverse-CDF sample of a column index from one probability row using a
    single uniform draw."""
    r = rng.random()
    cum = 0.0
    out = len(row) - 1
    for c in range(len(row)):
        cum += row[c]
        if r < cum:
            out = c
            break
    return out


def eval_probabilistic(table, input_pattern, rng):
    return sample_row(np.asarray(table)[input_pattern], rng)


_FB_SCRATCH = (np.empty(4, np.int64), np.empty(4, np.int64),
               np.empty(4, np.int64), np.empty((4, 16), np.uint8),
               np.empty(16, np.float64), np.empty(16, np.int64),
               np.empty(32, np.float64))


def apply_feedback(gate, sign, rng):
    """Adjust every buffered entry by a fresh uniform step in [0, delta_k]
    (slot 0 = newest), then clamp-and-renormalize each touched row once.
    No-op when frozen or when the buffer is empty."""
    if gate.frozen or not gate.buffer:
        return
    n = len(gate.buffer)
    bufi, bufo, rows, masks, vals, cols, bps = _FB_SCRATCH
    for k, (i, o) in enumerate(gate.buffer):
        bufi[k] = i
        bufo[k] = o
    flat = gate.table.reshape(-1)
    _apply_feedback_kernel(flat, 0, gate.table.shape[1], bufi, bufo, n,
                           np.asarray(gate.deltas, np.float64), float(sign),
                           rng, rows, masks, vals, cols, bps)


def eval_feedback(gate, input_pattern, pos_bit, neg_bit, rng):
    """Feedback first (on the buffer as it stood after the previous
    evaluation), then sample, then record the new (input, output) pair."""
    if pos_bit:
        apply_feedback(gate, +1, rng)
    if neg_bit:
        apply_feedback(gate, -1, rng)
    out = eval_probabilistic(gate.table, input_pattern, rng)
    gate.buffer.insert(0, (input_pattern, out))
    del gate.buffer[gate.depth:]
    return out


def freeze(gate):
    """Copy of a feedback gate whose feedback applications are no-ops."""
    g = copy.deepcopy(gate)
    g.frozen = True
    return g


def reset_gate(gate):
    """Restore birth state (feedback gates only; others are stateless)."""
    if isinstance(gate, FeedbackGate):
        gate.table = gate.birth_table.copy()
        gate.buffer.clear()


def table_mutual_information(table):
    """I(X;Y) in bits for X uniform over rows and Y drawn per row."""
    p = np.asarray(table, dtype=np.float64)
    rows = p.shape[0]
    py = p.mean(axis=0)

    def h(v):
        v = v[v > 0]
        return float(-(v * np.log2(v)).sum())

    h_cond = sum(h(p[i]) for i in range(rows)) / rows
    return max(h(py) - h_cond, 0.0)


def dump_gate(gate):
    """Stable text record of a gate (kind, wiring, table) for diffing."""
    lines = [f"kind={gate.kind}",
             f"inputs={','.join(map(str, gate.inputs))}",
             f"outputs={','.join(map(str, gate.outputs))}"]
    if isinstance(gate, FeedbackGate):
        lines.append(f"pos_src={gate.pos_src} neg_src={gate.neg_src} depth={gate.depth}")
        lines.append("deltas=" + " ".join(f"{d:.9f}" for d in gate.deltas))
    if isinstance(gate, DeterministicGate):
        for r in range(len(gate.table)):
            lines.append(f"row{r}={int(gate.table[r])}")
    else:
        for r in range(gate.table.shape[0]):
            lines.append(f"row{r}=" + " ".join(f"{v:.9f}" for v in gate.table[r]))
    return "\n".join(lines)
