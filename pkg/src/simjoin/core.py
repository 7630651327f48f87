"""Domain types for token-set records and exact Jaccard verification.

A record is a deduplicated, sorted list of integer token ids drawn from a
dense universe ``[0, d)``.  All similarity decisions in this package bottom
out here: every reported pair is verified with exact integer intersection
counts, so precision is always 100% regardless of which candidate
generation strategy produced the pair.

Token ids are 0-based dense integers (remapped at ingestion).  Threshold
comparisons use plain ``>=`` with no epsilon: intersection and union sizes
are exact integers and every algorithm computes the similarity ratio the
same way (float64 division), so the comparison is consistent everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix


@dataclass(frozen=True, eq=False)
class Record:
    """One set: an ordinal id plus a strictly increasing array of token ids."""

    id: int
    tokens: np.ndarray  # uint32, sorted ascending, no duplicates

    def __len__(self) -> int:
        return len(self.tokens)


class Dataset:
    """A collection of records over a dense token universe ``[0, d)``.

    ``token_frequency[j]`` counts the records containing token ``j``.
    Instances are immutable after construction and safe to share.
    """

    def __init__(self, records: list[Record], d: int,
                 source_lines: list[int] | None = None):
        self.records = records
        self.d = d
        self.sizes = np.array([len(r) for r in records], dtype=np.int64)
        if records:
            all_tokens = np.concatenate([r.tokens for r in records])
            self.token_frequency = np.bincount(all_tokens, minlength=d).astype(np.int64)
        else:
            self.token_frequency = np.zeros(d, dtype=np.int64)
        # 1-based input line number of each surviving record, when loaded
        # from a file; None for generated datasets.
        self.source_lines = source_lines
        self._csr: csr_matrix | None = None

    def __len__(self) -> int:
        return len(self.records)

    @classmethod
    def from_token_lists(cls, token_lists, d: int | None = None,
                         source_lines: list[int] | None = None) -> "Dataset":
        """Build a dataset from raw per-record token iterables.

        Within each record tokens are sorted and deduplicated.  Records with
        fewer than 2 distinct tokens are dropped, then duplicate records are
        dropped (first occurrence kept), then tokens are remapped to dense
        0-based ids by ascending original value.
        """
        cleaned = []
        kept_lines = []
        seen: set[bytes] = set()
        for idx, toks in enumerate(token_lists):
            arr = np.unique(np.asarray(list(toks), dtype=np.int64))
            if len(arr) < 2:
                continue
            key = arr.tobytes()
            if key in seen:
                continue
            seen.add(key)
            cleaned.append(arr)
            if source_lines is not None:
                kept_lines.append(source_lines[idx])

        if not cleaned:
            return cls([], d if d is not None else 0,
                       source_lines=[] if source_lines is not None else None)

        if d is None:
            universe = np.unique(np.concatenate(cleaned))
            cleaned = [np.searchsorted(universe, arr) for arr in cleaned]
            d = len(universe)
        records = [Record(i, arr.astype(np.uint32)) for i, arr in enumerate(cleaned)]
        return cls(records, d,
                   source_lines=kept_lines if source_lines is not None else None)

    def csr(self) -> csr_matrix:
        """Record-by-token incidence matrix (int32 CSR), built lazily."""
        if self._csr is None:
            indptr = np.zeros(len(self.records) + 1, dtype=np.int64)
            np.cumsum(self.sizes, out=indptr[1:])
            indices = (np.concatenate([r.tokens for r in self.records])
                       if self.records else np.array([], dtype=np.uint32))
            data = np.ones(len(indices), dtype=np.int32)
            self._csr = csr_matrix((data, indices.astype(np.int32), indptr),
                                   shape=(len(self.records), self.d))
        return self._csr

    def flat_tokens(self) -> tuple[np.ndarray, np.ndarray]:
        """All tokens concatenated (uint32) plus record offsets (len n+1)."""
        m = self.csr()
        return m.indices.astype(np.uint32), m.indptr


@dataclass(frozen=True)
class ResultPair:
    """An output pair of record ids with its exact similarity.

    For self-joins ``a < b`` always holds (use :meth:`canonical`); for
    cross joins ``a`` indexes the first input and ``b`` the second.
    """

    a: int
    b: int
    similarity: float = field(compare=False)

    @classmethod
    def canonical(cls, a: int, b: int, similarity: float) -> "ResultPair":
        if a == b:
            raise ValueError("self-pairs are never reported")
        if a > b:
            a, b = b, a
        return cls(a, b, similarity)

    def key(self) -> tuple[int, int]:
        return (self.a, self.b)


@dataclass
class Counters:
    """Candidate-pipeline tallies for one join run.

    ``pre_candidates`` counts every pair the join investigated,
    ``candidates`` the pairs surviving the size and sketch filters (these
    proceed to exact verification), and ``results`` the verified emissions.
    ``results <= candidates <= pre_candidates`` always holds.  ``max_depth``
    is the deepest recursion node observed (0 when no recursion happened).
    """

    pre_candidates: int = 0
    candidates: int = 0
    results: int = 0
    max_depth: int = 0
    peak_live_members: int = 0

    def merge(self, other: "Counters") -> None:
        self.pre_candidates += other.pre_candidates
        self.candidates += other.candidates
        self.results += other.results
        self.max_depth = max(self.max_depth, other.max_depth)
        self.peak_live_members = max(self.peak_live_members,
                                     other.peak_live_members)


def check_threshold(lam: float) -> float:
    """Validate a similarity threshold; must lie strictly in (0, 1)."""
    if not (0.0 < lam < 1.0):
        raise ValueError(f"threshold must be in (0, 1), got {lam}")
    return float(lam)


def intersection_size(x: Record, y: Record) -> int:
    """|x ∩ y| by a linear merge of the two sorted token lists."""
    xa, ya = x.tokens, y.tokens
    i = j = count = 0
    nx, ny = len(xa), len(ya)
    while i < nx and j < ny:
        tx, ty = xa[i], ya[j]
        if tx == ty:
            count += 1
            i += 1
            j += 1
        elif tx < ty:
            i += 1
        else:
            j += 1
    return count


def jaccard(x: Record, y: Record) -> float:
    """|x ∩ y| / |x ∪ y|.  Undefined (raises) when both records are empty."""
    if len(x) == 0 and len(y) == 0:
        raise ValueError("jaccard of two empty records is undefined")
    inter = intersection_size(x, y)
    return inter / (len(x) + len(y) - inter)


def braun_blanquet(x: Record, y: Record, t: int) -> float:
    """|x ∩ y| / t for two records of fixed size ``t``."""
    if len(x) != t or len(y) != t:
        raise ValueError(f"braun_blanquet requires |x| = |y| = {t}, "
                         f"got {len(x)} and {len(y)}")
    return intersection_size(x, y) / t


def verify_pair(x: Record, y: Record, lam: float) -> float | None:
    """Exact verification: return J(x, y) when J(x, y) >= lam, else None.

    The merge exits early once the remaining tokens provably cannot reach
    the minimum required overlap for the threshold.
    """
    nx, ny = len(x), len(y)
    if nx == 0 and ny == 0:
        raise ValueError("cannot verify two empty records")
    # J >= lam  <=>  inter >= lam * (nx + ny) / (1 + lam)
    min_overlap = math.ceil(lam * (nx + ny) / (1.0 + lam) - 1e-12)
    xa, ya = x.tokens, y.tokens
    i = j = inter = 0
    while i < nx and j < ny:
        if inter + min(nx - i, ny - j) < min_overlap:
            return None
        tx, ty = xa[i], ya[j]
        if tx == ty:
            inter += 1
            i += 1
            j += 1
        elif tx < ty:
            i += 1
        else:
            j += 1
    sim = inter / (nx + ny - inter)
    return sim if sim >= lam else None


def dedup_pairs(pairs: list[ResultPair]) -> list[ResultPair]:
    """Sort by (a, b) and drop duplicates with a single linear scan."""
    ordered = sorted(pairs, key=ResultPair.key)
    out: list[ResultPair] = []
    for p in ordered:
        if not out or out[-1].key() != p.key():
            out.append(p)
    return out
