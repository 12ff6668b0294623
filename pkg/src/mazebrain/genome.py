"""Byte-string genomes: initialization, mutation, and gene extraction.

A genome is a 1-D ``uint8`` numpy array.  Genes begin at two-byte start
codons (second byte is the bitwise complement of the first, which makes
accidental codons rare) and their payload is read circularly past the end
of the genome, so no gene is ever truncated.
"""

from dataclasses import dataclass

import numpy as np

GATE_KINDS = ("deterministic", "probabilistic", "feedback")

# codon -> kind; one codon per gate kind
START_CODONS = {
    "deterministic": (42, 213),
    "probabilistic": (43, 212),
    "feedback": (44, 211),
}
CODON_BY_FIRST_BYTE = {first: kind for kind, (first, _) in START_CODONS.items()}

MIN_LENGTH = 1_000
MAX_LENGTH = 20_000
INIT_LENGTH = 5_000
INIT_CODONS = 12

POINT_RATE = 0.003
DUP_RATE = 0.02
DEL_RATE = 0.02
DUP_LEN = (128, 512)   # inclusive bounds of duplicated stretch
DEL_LEN = (128, 255)   # inclusive bounds of deleted stretch


@dataclass
class GeneSpan:
    """One gene: its gate kind, codon position, and circularly-read payload."""
    gate_kind: str
    start_index: int
    payload: np.ndarray


def _circular_read(sites, start, count):
    idx = (start + np.arange(count)) % len(sites)
    return sites[idx]


def random_genome(length, n_codons, rng, kinds=GATE_KINDS):
    """Uniform random genome with `n_codons` start codons overwritten at
    non-overlapping positions, cycling through `kinds`."""
    if length < 1 or length < 2 * n_codons:
        raise ValueError(f"cannot fit {n_codons} codons in {length} sites")
    sites = rng.integers(0, 256, size=length, dtype=np.uint8)
    taken = []
    for k in range(n_codons):
        while True:
            p = int(rng.integers(0, length - 1))
            if all(abs(p - q) >= 2 for q in taken):
                break
        taken.append(p)
        first, second = START_CODONS[kinds[k % len(kinds)]]
        sites[p] = first
        sites[p + 1] = second
    return sites


def mutate(parent, rng, point_rate=POINT_RATE, dup_rate=DUP_RATE,
           del_rate=DEL_RATE, min_length=MIN_LENGTH, max_length=MAX_LENGTH,
           log=None):
    """Asexual reproduction: point mutations, then one possible duplication,
    then one possible deletion.  Structural steps are skipped when they would
    push the length outside [min_length, max_length].

    `log`, if given, is a dict collecting event counts (for rate statistics).
    """
    child = parent.copy()
    hits = rng.random(len(child)) < point_rate
    n_hits = int(hits.sum())
    if n_hits:
        child[hits] = rng.integers(0, 256, size=n_hits, dtype=np.uint8)
    if log is not None:
        log["point"] = log.get("point", 0) + n_hits
        log["sites"] = log.get("sites", 0) + len(child)

    L = len(child)
    if L < max_length and rng.random() < dup_rate:
        dlen = int(rng.integers(DUP_LEN[0], DUP_LEN[1] + 1))
        if L + dlen <= max_length and dlen <= L:
            src = int(rng.integers(0, L - dlen + 1))
            ins = int(rng.integers(0, L + 1))
            child = np.concatenate([child[:ins], child[src:src + dlen], child[ins:]])
            if log is not None:
                log["dup"] = log.get("dup", 0) + 1

    L = len(child)
    if L > min_length and rng.random() < del_rate:
        dlen = int(rng.integers(DEL_LEN[0], DEL_LEN[1] + 1))
        if L - dlen >= min_length:
            start = int(rng.integers(0, L - dlen + 1))
            child = np.concatenate([child[:start], child[start + dlen:]])
            if log is not None:
                log["del"] = log.get("del", 0) + 1
    return child


def payload_length(kind, n_ins, n_outs):
    """Payload size in bytes: header plus table region."""
    n = 2 + n_ins + n_outs            # arity bytes + wiring addresses
    if kind == "feedback":
        n += 7                        # pos_src, neg_src, depth, 4 deltas
    rows = 1 << n_ins
    if kind == "deterministic":
        n += rows
    else:
        n += rows * (1 << n_outs)
    return n


def extract_genes(sites, kinds=GATE_KINDS):
    """Scan left to right for start codons and return one GeneSpan per codon.

    The codon's second byte may wrap to position 0; payloads always read
    circularly.  Pure function of the genome.
    """
    spans = []
    L = len(sites)
    if L < 2:
        return spans
    enabled = {START_CODONS[k]: k for k in kinds}
    for i in range(L):
        pair = (int(sites[i]), int(sites[(i + 1) % L]))
        kind = enabled.get(pair)
        if kind is None:
            continue
        n_ins = 1 + int(sites[(i + 2) % L]) % 4
        n_outs = 1 + int(sites[(i + 3) % L]) % 4
        payload = _circular_read(sites, i + 2, payload_length(kind, n_ins, n_outs))
        spans.append(GeneSpan(gate_kind=kind, start_index=i, payload=payload))
    return spans


def genome_to_hex(sites):
    return sites.tobytes().hex()


def genome_from_hex(text):
    return np.frombuffer(bytes.fromhex(text.strip()), dtype=np.uint8).copy()


def write_snapshot(path, records, seed):
    """Write genomes as hex lines, each preceded by a metadata header line.

    `records`: iterable of (id, parent_id, generation, genome).
    """
    with open(path, "w") as fh:
        fh.write(f"# seed={seed}\n")
        for ind_id, parent_id, generation, sites in records:
            fh.write(f"#id={ind_id} parent={parent_id} generation={generation}\n")
            fh.write(genome_to_hex(sites) + "\n")


def read_snapshot(path):
    records = []
    meta = None
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#id="):
                fields = dict(kv.split("=") for kv in line[1:].split())
                meta = (int(fields["id"]), int(fields["parent"]), int(fields["generation"]))
            elif line.startswith("#"):
                continue
            else:
                records.append(meta + (genome_from_hex(line),))
                meta = None
    return records
