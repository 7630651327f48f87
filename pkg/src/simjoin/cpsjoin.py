"""Randomized recursive set similarity self-join with exact verification.

The join recursively partitions the record set along randomly chosen
token positions, forming a tree in which similar records tend to share
nodes; pairs are emitted only from brute-force comparisons at small or
dense nodes, and every emission is verified exactly, so precision is
always 100% while recall is probabilistic and driven up by independent
repetitions.

At each node the algorithm first decides, per record, whether continuing
the recursion is expected to beat comparing the record against the whole
node right away: a record whose average similarity to the node exceeds
``(1 - epsilon) * lambda`` is compared against everything (and removed),
because splitting further would only multiply the comparisons it takes
part in.  The average similarity is estimated in O(ell) words from a node
sketch assembled out of the records' 1-bit minwise sketches; an exact
token-counting variant of the rule is available behind a flag for testing.

Candidate pairs inside brute-force calls pass a size filter and a sketch
filter calibrated so that pairs at the threshold are falsely rejected
with probability below ``delta``, then survivors are verified exactly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import Counters, ResultPair, check_threshold
from .embed import EmbeddedDataset, union_embedded
from .hashing import (
    KIND_CPS_TREE,
    derive_rng,
    match_threshold,
    uniform_stream,
    word_stream,
)

logger = logging.getLogger(__name__)

_U64 = np.uint64

# counter-stream layout inside a node's seed space: position selection
# draws come first, then node-sketch sample draws, then child seeds
_OFF_POSITIONS = 0


@dataclass
class CPSJoinParams:
    """Tuning knobs; the defaults are the recommended production setting."""

    lambda_: float
    limit: int = 250
    epsilon: float = 0.1
    ell: int = 8
    delta: float = 0.05
    t: int = 128
    repetitions: int = 10
    seed: int = 0
    use_count_table: bool = False
    depth_cap: int = 64

    def __post_init__(self):
        check_threshold(self.lambda_)
        if self.limit < 1:
            raise ValueError("limit must be at least 1")
        if not (0.0 <= self.epsilon < 1.0):
            raise ValueError("epsilon must lie in [0, 1)")
        if not (0.0 < self.delta < 1.0):
            raise ValueError("delta must lie in (0, 1)")
        if self.repetitions < 1:
            raise ValueError("repetitions must be positive")
        if self.ell < 1:
            raise ValueError("ell must be at least 1")


class NodeState(NamedTuple):
    members: np.ndarray  # row indices alive at this node
    depth: int
    seed: int


class JoinEngine:
    """Sketch-filtered brute force over rows of an embedded dataset.

    Shared by the recursive join and the LSH join: counts pre-candidates,
    filters by record size and sketch estimate, verifies survivors exactly
    against the original records, and accumulates verified emissions.
    """

    def __init__(self, emb: EmbeddedDataset, lambda_: float, ell: int,
                 delta: float, seed: int):
        self.emb = emb
        self.lam = lambda_
        self.mbits = 64 * ell
        self.kstar = match_threshold(lambda_, delta, self.mbits)
        self.sketches = emb.sketches(ell, seed)
        self.sizes = emb.sizes
        self.csr = emb.verify_csr
        self.side = emb.side
        self.counters = Counters()
        self._a_chunks: list[np.ndarray] = []
        self._b_chunks: list[np.ndarray] = []
        self._sim_chunks: list[np.ndarray] = []

    # ------------------------------------------------------------------
    # candidate filtering and exact verification
    # ------------------------------------------------------------------

    def _verify_and_emit(self, rows_a: np.ndarray, rows_b: np.ndarray) -> None:
        if len(rows_a) == 0:
            return
        self.counters.candidates += len(rows_a)
        inter = np.asarray(self.csr[rows_a].multiply(self.csr[rows_b])
                           .sum(axis=1)).ravel()
        union = self.sizes[rows_a] + self.sizes[rows_b] - inter
        sim = inter / union
        keep = sim >= self.lam
        if keep.any():
            self.counters.results += int(keep.sum())
            self._a_chunks.append(rows_a[keep])
            self._b_chunks.append(rows_b[keep])
            self._sim_chunks.append(sim[keep])

    def _size_side_filter(self, rows_a: np.ndarray, rows_b: np.ndarray
                          ) -> np.ndarray:
        sa, sb = self.sizes[rows_a], self.sizes[rows_b]
        # a valid pair needs min >= lam * max; the slack keeps borderline
        # float roundings on the candidate side, verification decides
        mask = np.minimum(sa, sb) >= self.lam * np.maximum(sa, sb) - 1e-9
        if self.side is not None:
            mask &= self.side[rows_a] != self.side[rows_b]
        return mask

    def brute_force_pairs(self, members: np.ndarray) -> None:
        """Consider every unordered pair of the given rows."""
        m = len(members)
        if m < 2:
            return
        self.counters.pre_candidates += m * (m - 1) // 2
        sk = self.sketches[members]
        cols = np.arange(m)
        block = max(1, 2_000_000 // (m * sk.shape[1]))
        for lo in range(0, m - 1, block):
            hi = min(lo + block, m - 1)
            dist = np.bitwise_count(sk[lo:hi, None, :] ^ sk[None, :, :]).sum(axis=2)
            matches = self.mbits - dist
            upper = cols[None, :] > np.arange(lo, hi)[:, None]
            ii, jj = np.nonzero(upper & (matches >= self.kstar))
            rows_a = members[ii + lo]
            rows_b = members[jj]
            mask = self._size_side_filter(rows_a, rows_b)
            self._verify_and_emit(rows_a[mask], rows_b[mask])

    def brute_force_point(self, x_row: int, members: np.ndarray) -> None:
        """Consider every pair formed by ``x_row`` with the given rows."""
        others = members[members != x_row]
        if len(others) == 0:
            return
        self.counters.pre_candidates += len(others)
        dist = np.bitwise_count(self.sketches[others] ^ self.sketches[x_row]
                                ).sum(axis=1)
        keep = (self.mbits - dist) >= self.kstar
        others = others[keep]
        rows_a = np.full(len(others), x_row, dtype=members.dtype)
        mask = self._size_side_filter(rows_a, others)
        self._verify_and_emit(rows_a[mask], others[mask])

    def collected(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if not self._a_chunks:
            empty = np.array([], dtype=np.int64)
            return empty, empty.copy(), np.array([], dtype=np.float64)
        return (np.concatenate(self._a_chunks),
                np.concatenate(self._b_chunks),
                np.concatenate(self._sim_chunks))


def node_sketch(sketches: np.ndarray, members: np.ndarray, seed: int,
                offset: int = 0) -> np.ndarray:
    """Sketch of a node: bit i taken from the sketch of the i-th sample.

    Samples ``64 * ell`` member rows with replacement; comparing a record
    sketch against the result estimates the record's average similarity to
    the node in O(ell) words.
    """
    ell = sketches.shape[1]
    mbits = 64 * ell
    u = uniform_stream(seed, mbits, offset=offset)
    picks = members[(u * len(members)).astype(np.int64)]
    bit_pos = np.arange(mbits, dtype=np.int64)
    words = sketches[picks, bit_pos >> 6]
    bits = (words >> (bit_pos & 63).astype(_U64)) & _U64(1)
    shifted = bits << (bit_pos & 63).astype(_U64)
    return np.bitwise_or.reduceat(shifted, np.arange(0, mbits, 64))


def _sketch_estimates(engine: JoinEngine, members: np.ndarray,
                      nsketch: np.ndarray) -> np.ndarray:
    """Estimated average similarity of each member to the node."""
    dist = np.bitwise_count(engine.sketches[members] ^ nsketch[None, :]
                            ).sum(axis=1)
    return 2.0 * (engine.mbits - dist) / engine.mbits - 1.0


def _count_table_estimates(emb: EmbeddedDataset, members: np.ndarray) -> np.ndarray:
    """Exact average embedded similarity of each member to the node.

    Token-count form of the recursion rule: for member x this is
    sum over positions of (count[token] - 1) / t, averaged over the
    other |S| - 1 members.
    """
    dense = emb.dense[members]
    counts = np.bincount(dense.ravel(), minlength=emb.d)
    per_member = counts[dense].sum(axis=1) - emb.t
    return per_member / (emb.t * (len(members) - 1))


def split_buckets(emb: EmbeddedDataset, members: np.ndarray, lambda_: float,
                  seed: int) -> list[np.ndarray]:
    """One splitting step: partition members on randomly chosen positions.

    Each of the t positions is selected independently with probability
    1 / (lambda * t) (so each embedded token is included with probability
    1 / (lambda * |x|), |x| = t); for every selected position the members
    are grouped by their stored minhash value there.  Groups with fewer
    than two members cannot produce pairs and are dropped.
    """
    t = emb.t
    u = uniform_stream(seed, t, offset=_OFF_POSITIONS)
    selected = np.nonzero(u < 1.0 / (lambda_ * t))[0]
    children: list[np.ndarray] = []
    for pos in selected:
        vals = emb.values[members, pos]
        order = np.argsort(vals, kind="stable")
        sorted_members = members[order]
        sorted_vals = vals[order]
        cuts = np.nonzero(np.diff(sorted_vals))[0] + 1
        for group in np.split(sorted_members, cuts):
            if len(group) >= 2:
                children.append(group)
    return children


def brute_force_step(engine: JoinEngine, params: CPSJoinParams,
                     members: np.ndarray, seed: int) -> np.ndarray:
    """Pre-split pruning; returns the members that continue recursing.

    Nodes at or below ``limit`` are fully compared and the branch ends.
    Otherwise every member whose estimated average similarity to the node
    exceeds ``(1 - epsilon) * lambda`` is compared against the node in one
    pass (the node estimate is not recomputed after removals) and dropped
    from the recursion.
    """
    m = len(members)
    if m <= params.limit:
        engine.brute_force_pairs(members)
        return members[:0]
    if params.use_count_table:
        est = _count_table_estimates(engine.emb, members)
    else:
        nsketch = node_sketch(engine.sketches, members, seed,
                              offset=engine.emb.t)
        est = _sketch_estimates(engine, members, nsketch)
    cond = est > (1.0 - params.epsilon) * params.lambda_
    if not cond.any():
        return members
    alive = np.ones(m, dtype=bool)
    for pos in np.nonzero(cond)[0]:
        engine.brute_force_point(int(members[pos]), members[alive])
        alive[pos] = False
    return members[alive]


def _run_tree(engine: JoinEngine, params: CPSJoinParams,
              root_members: np.ndarray, tree_seed: int) -> None:
    """One independent recursion tree, traversed depth-first."""
    counters = engine.counters
    stack = [NodeState(root_members, 0, tree_seed)]
    stack_total = len(root_members)
    counters.peak_live_members = max(counters.peak_live_members, stack_total)
    t = engine.emb.t
    child_seed_offset = t + engine.mbits
    while stack:
        members, depth, seed = stack.pop()
        stack_total -= len(members)
        counters.max_depth = max(counters.max_depth, depth)
        survivors = brute_force_step(engine, params, members, seed)
        if len(survivors) < 2:
            continue
        if depth >= params.depth_cap:
            logger.warning("depth cap %d reached with %d members; branch aborted",
                           params.depth_cap, len(survivors))
            continue
        children = split_buckets(engine.emb, survivors, params.lambda_, seed)
        if not children:
            continue
        seeds = word_stream(seed, len(children), offset=child_seed_offset)
        for child, child_seed in zip(children, seeds):
            stack.append(NodeState(child, depth + 1, int(child_seed)))
            stack_total += len(child)
        counters.peak_live_members = max(counters.peak_live_members, stack_total)


def _build_self_pairs(engine: JoinEngine) -> list[ResultPair]:
    """Map verified row pairs to source ids, orient a < b, dedup sorted."""
    rows_a, rows_b, sims = engine.collected()
    if len(rows_a) == 0:
        return []
    ids_a = engine.emb.source_ids[rows_a]
    ids_b = engine.emb.source_ids[rows_b]
    lo = np.minimum(ids_a, ids_b).astype(np.uint64)
    hi = np.maximum(ids_a, ids_b).astype(np.uint64)
    keys = (lo << _U64(32)) | hi
    _, first = np.unique(keys, return_index=True)
    return [ResultPair(int(lo[i]), int(hi[i]), float(sims[i])) for i in first]


def _check_depth_bound(counters: Counters, n: int, epsilon: float) -> None:
    eps_eff = max(epsilon, 0.05)
    if n > 1:
        bound = 12.0 * math.log(n) / eps_eff
        if counters.max_depth > bound:
            logger.warning("observed recursion depth %d exceeds advisory bound "
                           "%.1f for n=%d", counters.max_depth, bound, n)


def cpsjoin_self(emb: EmbeddedDataset, params: CPSJoinParams
                 ) -> tuple[list[ResultPair], Counters]:
    """Self-join: all pairs of records with exact similarity >= lambda.

    Runs ``repetitions`` independent trees with derived seeds, unions the
    verified emissions, and deduplicates by sorting.  Every returned pair
    carries its exact similarity on the original records.
    """
    if emb.values.shape[1] != emb.t:
        raise ValueError("embedded dataset is inconsistent")
    engine = JoinEngine(emb, params.lambda_, params.ell, params.delta,
                        params.seed)
    n = len(emb)
    if n >= 2:
        root = np.arange(n, dtype=np.int64)
        rep_seeds = derive_rng(params.seed, KIND_CPS_TREE).integers(
            0, 2**64, size=params.repetitions, dtype=_U64)
        for rep_seed in rep_seeds:
            _run_tree(engine, params, root, int(rep_seed))
    _check_depth_bound(engine.counters, n, params.epsilon)
    return _build_self_pairs(engine), engine.counters


def join_rs(r: EmbeddedDataset, s: EmbeddedDataset, params: CPSJoinParams
            ) -> tuple[list[ResultPair], Counters]:
    """Cross join of two embeddings sharing a function family.

    Performs a self-join over the tagged union while suppressing pairs
    whose sides match before verification.  Output pairs are oriented:
    ``a`` is a record id of ``r`` and ``b`` a record id of ``s``.
    """
    union = union_embedded(r, s)
    engine = JoinEngine(union, params.lambda_, params.ell, params.delta,
                        params.seed)
    n = len(union)
    if n >= 2:
        root = np.arange(n, dtype=np.int64)
        rep_seeds = derive_rng(params.seed, KIND_CPS_TREE).integers(
            0, 2**64, size=params.repetitions, dtype=_U64)
        for rep_seed in rep_seeds:
            _run_tree(engine, params, root, int(rep_seed))
    _check_depth_bound(engine.counters, n, params.epsilon)
    rows_a, rows_b, sims = engine.collected()
    pairs: list[ResultPair] = []
    if len(rows_a) > 0:
        side_a = union.side[rows_a]
        r_rows = np.where(side_a == 0, rows_a, rows_b)
        s_rows = np.where(side_a == 0, rows_b, rows_a)
        ids_r = union.source_ids[r_rows].astype(np.uint64)
        ids_s = union.source_ids[s_rows].astype(np.uint64)
        keys = (ids_r << _U64(32)) | ids_s
        _, first = np.unique(keys, return_index=True)
        pairs = [ResultPair(int(ids_r[i]), int(ids_s[i]), float(sims[i]))
                 for i in first]
    return pairs, engine.counters
