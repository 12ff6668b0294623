"""16-node gate networks: 4 sensor nodes, 2 output nodes, 10 hidden nodes.

Per step, every gate reads a snapshot of the node states and writes into a
fresh zeroed image combined by bitwise OR, so hidden information decays
unless actively rewritten.
"""

import numpy as np

from . import gates as gates_mod
from .genome import GATE_KINDS, extract_genes
from .gates import (DeterministicGate, FeedbackGate, eval_deterministic,
                    eval_feedback, eval_probabilistic, reset_gate)

N_NODES = 16
SENSOR_NODES = (0, 1, 2, 3)
OUTPUT_NODES = (4, 5)


class Brain:
    def __init__(self, gate_list):
        self.nodes = np.zeros(N_NODES, dtype=np.uint8)
        self.gates = list(gate_list)

    def gate_counts(self):
        c = {"deterministic": 0, "probabilistic": 0, "feedback": 0}
        for g in self.gates:
            c[g.kind] += 1
        return c["deterministic"], c["probabilistic"], c["feedback"]

    @property
    def feedback_gates(self):
        return [g for g in self.gates if isinstance(g, FeedbackGate)]


def build_brain(genome_sites, kinds=GATE_KINDS):
    """Decode every recognized gene into a gate, in genomic order."""
    return Brain(gates_mod.decode_gate(span) for span in extract_genes(genome_sites, kinds))


def step(brain, sensors, rng):
    """One network update: returns the two output bits."""
    nodes = brain.nodes
    for i, bit in zip(SENSOR_NODES, sensors):
        nodes[i] = 1 if bit else 0
    read = nodes.copy()
    nxt = np.zeros(N_NODES, dtype=np.uint8)
    for g in brain.gates:
        pattern = 0
        for j, addr in enumerate(g.inputs):
            if read[addr]:
                pattern |= 1 << j
        if isinstance(g, DeterministicGate):
            out = eval_deterministic(g, pattern)
        elif isinstance(g, FeedbackGate):
            out = eval_feedback(g, pattern, int(read[g.pos_src]), int(read[g.neg_src]), rng)
        else:
            out = eval_probabilistic(g.table, pattern, rng)
        for j, addr in enumerate(g.outputs):
            if (out >> j) & 1:
                nxt[addr] = 1
    nodes[:] = nxt
    return int(nodes[4]), int(nodes[5])


def reset(brain):
    """Zero node states, empty feedback buffers, restore birth tables."""
    brain.nodes[:] = 0
    for g in brain.gates:
        reset_gate(g)
    return brain


def freeze_feedback(brain):
    """Mark every feedback gate frozen (in place)."""
    for g in brain.feedback_gates:
        g.frozen = True
    return brain
