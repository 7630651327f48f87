"""Tabulation hashing, MinHash, and 1-bit minwise sketches.

A Zobrist (simple tabulation) hash maps a 32-bit key to 64 bits by XOR-ing
four table entries selected by the key's bytes.  MinHash is the arg-min of
such a hash over a record's tokens; for two records the collision
probability of their MinHash values equals their Jaccard similarity.

A sketch packs ``64 * ell`` one-bit minwise hashes into ``ell`` machine
words.  Two sketch bits agree with probability ``(1 + J) / 2``, so the
popcount of the XOR of two sketches yields a fast similarity estimate; the
matching-bit threshold that keeps the false negative rate of filtering at
a given similarity below ``delta`` is computed from the exact binomial CDF.

All randomness is derived from explicit integer seeds through numpy's
``SeedSequence`` (counter-based), so identical seeds give identical tables,
sketches, and downstream join output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import binom

from .core import Record

_U64 = np.uint64
_TOKEN_SENTINEL = _U64(0xFFFFFFFFFFFFFFFF)

# spawn-key namespaces under one master seed
KIND_EMBED = 1
KIND_SKETCH = 2
KIND_CPS_TREE = 3
KIND_MINHASH_REP = 4
KIND_GENERATOR = 5

_MIX_GAMMA = _U64(0x9E3779B97F4A7C15)
_MIX_M1 = _U64(0xBF58476D1CE4E5B9)
_MIX_M2 = _U64(0x94D049BB133111EB)


def derive_rng(master_seed: int, *path: int) -> np.random.Generator:
    """Independent generator for (master seed, namespace path)."""
    ss = np.random.SeedSequence(master_seed, spawn_key=tuple(path))
    return np.random.default_rng(ss)


def mix64(x: np.ndarray | int) -> np.ndarray:
    """SplitMix64 finalizer; bijective on 64-bit words, vectorized."""
    z = np.asarray(x, dtype=_U64)
    with np.errstate(over="ignore"):
        z = z + _MIX_GAMMA
        z = (z ^ (z >> _U64(30))) * _MIX_M1
        z = (z ^ (z >> _U64(27))) * _MIX_M2
        return z ^ (z >> _U64(31))


def word_stream(seed: int, n: int, offset: int = 0) -> np.ndarray:
    """``n`` deterministic 64-bit words from a counter stream."""
    counters = np.arange(offset, offset + n, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return mix64(np.uint64(seed) ^ mix64(counters))


def uniform_stream(seed: int, n: int, offset: int = 0) -> np.ndarray:
    """``n`` deterministic floats in [0, 1) from a counter stream."""
    return word_stream(seed, n, offset) / 2.0**64


@dataclass(frozen=True, eq=False)
class ZobristTable:
    """Four 256-entry sub-tables of 64-bit words; one per key byte."""

    table: np.ndarray  # (4, 256) uint64

    @classmethod
    def from_rng(cls, rng: np.random.Generator) -> "ZobristTable":
        return cls(rng.integers(0, 2**64, size=(4, 256), dtype=_U64))

    @classmethod
    def from_seed(cls, seed: int) -> "ZobristTable":
        return cls.from_rng(derive_rng(seed))


def zobrist_hash(table: ZobristTable, key: int) -> int:
    """Hash one 32-bit key: XOR of the four byte-selected table entries."""
    t = table.table
    return int(t[0, key & 0xFF]
               ^ t[1, (key >> 8) & 0xFF]
               ^ t[2, (key >> 16) & 0xFF]
               ^ t[3, (key >> 24) & 0xFF])


def _byte_columns(keys: np.ndarray) -> tuple[np.ndarray, ...]:
    k = keys.astype(np.uint32)
    return ((k & 0xFF).astype(np.intp),
            ((k >> 8) & 0xFF).astype(np.intp),
            ((k >> 16) & 0xFF).astype(np.intp),
            ((k >> 24) & 0xFF).astype(np.intp))


def zobrist_hash_vec(table: np.ndarray, keys: np.ndarray,
                     byte_cols: tuple[np.ndarray, ...] | None = None) -> np.ndarray:
    """Vectorized tabulation hash of many keys with one (4, 256) table."""
    b0, b1, b2, b3 = byte_cols if byte_cols is not None else _byte_columns(keys)
    return table[0][b0] ^ table[1][b1] ^ table[2][b2] ^ table[3][b3]


@dataclass(frozen=True, eq=False)
class MinHashFunction:
    """h(x) = the token of x minimizing g, ties broken by smallest token."""

    g: ZobristTable


def minhash(fn: MinHashFunction, x: Record) -> int:
    if len(x) == 0:
        raise ValueError("minhash of an empty record is undefined")
    best_g = None
    best_tok = None
    for tok in x.tokens:
        gv = zobrist_hash(fn.g, int(tok))
        if best_g is None or gv < best_g or (gv == best_g and tok < best_tok):
            best_g, best_tok = gv, int(tok)
    return best_tok


def minhash_segments(table: np.ndarray, flat_tokens: np.ndarray,
                     offsets: np.ndarray,
                     byte_cols: tuple[np.ndarray, ...] | None = None,
                     sizes: np.ndarray | None = None) -> np.ndarray:
    """MinHash token per record for concatenated token arrays.

    ``offsets`` delimits records in ``flat_tokens`` (length n+1, all
    segments non-empty).  Semantics match :func:`minhash` exactly: full
    64-bit hash comparison, ties broken by the smallest token.
    """
    starts = offsets[:-1]
    if sizes is None:
        sizes = np.diff(offsets)
    g = zobrist_hash_vec(table, flat_tokens, byte_cols)
    seg_min = np.minimum.reduceat(g, starts)
    at_min = g == np.repeat(seg_min, sizes)
    masked = np.where(at_min, flat_tokens.astype(_U64), _TOKEN_SENTINEL)
    return np.minimum.reduceat(masked, starts).astype(np.uint32)


@dataclass(frozen=True, eq=False)
class Sketch:
    """``ell`` 64-bit words; bit i is a one-bit hash of the i-th minhash."""

    words: np.ndarray  # (ell,) uint64

    @property
    def bits(self) -> int:
        return 64 * len(self.words)


class SketchFamily:
    """64*ell MinHash functions paired with 64*ell one-bit hash functions.

    The one-bit hash of a 32-bit value is the low bit of an independent
    64-bit tabulation hash.  One family is shared by all records of a
    dataset so that sketches are comparable.
    """

    def __init__(self, ell: int, seed: int):
        if ell < 1:
            raise ValueError("sketch length must be at least one word")
        self.ell = ell
        self.seed = seed
        self.bits = 64 * ell
        rng = derive_rng(seed, KIND_SKETCH)
        self.minhash_tables = rng.integers(0, 2**64, size=(self.bits, 4, 256),
                                           dtype=_U64)
        self.bit_tables = rng.integers(0, 2**64, size=(self.bits, 4, 256),
                                       dtype=_U64)

    def minhash_fn(self, i: int) -> MinHashFunction:
        return MinHashFunction(ZobristTable(self.minhash_tables[i]))

    def bit_fn(self, i: int) -> ZobristTable:
        return ZobristTable(self.bit_tables[i])


def build_sketch(family: SketchFamily, x: Record) -> Sketch:
    """Sketch of one record; bit i = low bit of bit-hash of minhash i."""
    words = np.zeros(family.ell, dtype=_U64)
    for i in range(family.bits):
        h = minhash(family.minhash_fn(i), x)
        bit = zobrist_hash(family.bit_fn(i), h) & 1
        words[i >> 6] |= _U64(bit) << _U64(i & 63)
    return Sketch(words)


def build_sketch_matrix(family: SketchFamily, flat_tokens: np.ndarray,
                        offsets: np.ndarray) -> np.ndarray:
    """Sketches of all records as an (n, ell) uint64 matrix."""
    n = len(offsets) - 1
    words = np.zeros((n, family.ell), dtype=_U64)
    if n == 0 or len(flat_tokens) == 0:
        return words
    byte_cols = _byte_columns(flat_tokens)
    sizes = np.diff(offsets)
    for i in range(family.bits):
        h = minhash_segments(family.minhash_tables[i], flat_tokens, offsets,
                             byte_cols=byte_cols, sizes=sizes)
        bit = zobrist_hash_vec(family.bit_tables[i], h) & _U64(1)
        words[:, i >> 6] |= bit << _U64(i & 63)
    return words


def hamming(a: np.ndarray, b: np.ndarray) -> int:
    """Number of differing bits between two word arrays of equal length."""
    if a.shape != b.shape:
        raise ValueError("sketch length mismatch")
    return int(np.bitwise_count(a ^ b).sum())


def estimate_similarity(a: Sketch, b: Sketch) -> float:
    """Similarity estimate from two sketches of the same family.

    With match fraction p of the m bits, returns max(0, 2p - 1): the
    inversion of the (1 + J) / 2 per-bit match probability, clamped to the
    similarity domain.
    """
    m = a.bits
    dist = hamming(a.words, b.words)
    p_match = (m - dist) / m
    return max(0.0, 2.0 * p_match - 1.0)


def match_threshold(lam: float, delta: float, m: int) -> int:
    """Smallest matching-bit count the sketch filter should accept.

    For a pair with true similarity ``lam`` the matching bits are
    Binomial(m, (1 + lam) / 2); the returned count k* satisfies
    Pr[matches < k*] < delta, so filtering at k* has a false negative
    rate below ``delta``.
    """
    if not (0.0 < delta < 1.0):
        raise ValueError("delta must be in (0, 1)")
    if m <= 0 or m % 64 != 0:
        raise ValueError("sketch bit count must be a positive multiple of 64")
    p = (1.0 + lam) / 2.0
    return int(binom.ppf(delta, m, p))


def calibrate_threshold(lam: float, delta: float, m: int) -> float:
    """Largest estimate threshold with false negative probability < delta.

    The returned value can be negative for small ``lam`` and ``m``; the
    filter then accepts every pair, which trivially satisfies the bound.
    """
    kstar = match_threshold(lam, delta, m)
    return 2.0 * kstar / m - 1.0
