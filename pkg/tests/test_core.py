import numpy as np
import pytest

from simjoin.core import (
    Counters,
    Dataset,
    Record,
    ResultPair,
    braun_blanquet,
    check_threshold,
    dedup_pairs,
    intersection_size,
    jaccard,
    verify_pair,
)


def rec(*tokens, id=0):
    return Record(id, np.array(sorted(set(tokens)), dtype=np.uint32))


def random_record(rng, d=60, max_size=20, id=0):
    size = int(rng.integers(2, max_size))
    return Record(id, np.sort(rng.choice(d, size=size, replace=False)).astype(np.uint32))


class TestIntersectionSize:
    def test_example_pair(self):
        # {1,2,3} vs {2,3,4} overlap in exactly two tokens
        assert intersection_size(rec(1, 2, 3), rec(2, 3, 4)) == 2

    def test_identity(self):
        x = rec(3, 7, 9, 20)
        assert intersection_size(x, x) == len(x)

    def test_disjoint(self):
        assert intersection_size(rec(1, 2), rec(3, 4)) == 0

    def test_bounded_by_smaller_record(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            x, y = random_record(rng), random_record(rng)
            assert intersection_size(x, y) <= min(len(x), len(y))

    def test_matches_set_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            x, y = random_record(rng), random_record(rng)
            expected = len(set(x.tokens.tolist()) & set(y.tokens.tolist()))
            assert intersection_size(x, y) == expected


class TestJaccard:
    def test_example_half(self):
        # the {IT, University, Copenhagen} / {University, Copenhagen, Denmark}
        # shape: 3-token sets sharing 2 tokens
        assert jaccard(rec(1, 2, 3), rec(2, 3, 4)) == 0.5

    def test_identity_is_one(self):
        x = rec(5, 6, 7)
        assert jaccard(x, x) == 1.0

    def test_disjoint_is_zero(self):
        assert jaccard(rec(1, 5), rec(2, 7)) == 0.0

    def test_both_empty_is_error(self):
        empty = Record(0, np.array([], dtype=np.uint32))
        with pytest.raises(ValueError):
            jaccard(empty, empty)

    def test_symmetry_and_bounds(self):
        rng = np.random.default_rng(3)
        for _ in range(300):
            x, y = random_record(rng), random_record(rng)
            jxy = jaccard(x, y)
            assert 0.0 <= jxy <= 1.0
            assert jxy == jaccard(y, x)
            assert jaccard(x, x) == 1.0


class TestBraunBlanquet:
    def test_identity(self):
        x = rec(1, 2, 3, 4)
        assert braun_blanquet(x, x, 4) == 1.0

    def test_disjoint(self):
        assert braun_blanquet(rec(1, 2, 3), rec(4, 5, 6), 3) == 0.0

    def test_half_overlap(self):
        assert braun_blanquet(rec(1, 2, 3, 4), rec(3, 4, 5, 6), 4) == 0.5

    def test_size_mismatch_is_error(self):
        with pytest.raises(ValueError):
            braun_blanquet(rec(1, 2, 3), rec(1, 2, 3, 4), 4)


class TestVerifyPair:
    def test_reports_at_threshold(self):
        assert verify_pair(rec(1, 2, 3), rec(2, 3, 4), 0.5) == 0.5

    def test_rejects_above_threshold(self):
        assert verify_pair(rec(1, 2, 3), rec(2, 3, 4), 0.6) is None

    def test_identical_records_always_pass(self):
        x = rec(9, 10, 11)
        for lam in (0.1, 0.5, 0.99):
            assert verify_pair(x, x, lam) == 1.0

    def test_agrees_with_direct_jaccard(self):
        rng = np.random.default_rng(19)
        for _ in range(500):
            x, y = random_record(rng), random_record(rng)
            lam = float(rng.uniform(0.05, 0.95))
            j = jaccard(x, y)
            got = verify_pair(x, y, lam)
            if j >= lam:
                assert got == j
            else:
                assert got is None


class TestDedupPairs:
    def test_empty(self):
        assert dedup_pairs([]) == []

    def test_small_example(self):
        pairs = [ResultPair(1, 2, 0.8), ResultPair(1, 2, 0.8), ResultPair(0, 3, 0.6)]
        out = dedup_pairs(pairs)
        assert [p.key() for p in out] == [(0, 3), (1, 2)]

    def test_matches_set_oracle(self):
        rng = np.random.default_rng(23)
        pairs = []
        for _ in range(500):
            a = int(rng.integers(0, 30))
            b = int(rng.integers(0, 30))
            if a == b:
                continue
            pairs.append(ResultPair.canonical(a, b, 0.5))
        expected = {p.key() for p in pairs}
        out = dedup_pairs(pairs)
        assert len(out) == len(expected)
        assert {p.key() for p in out} == expected
        assert [p.key() for p in out] == sorted(p.key() for p in out)


class TestResultPair:
    def test_canonical_orders_ids(self):
        p = ResultPair.canonical(7, 3, 0.9)
        assert (p.a, p.b) == (3, 7)

    def test_self_pair_rejected(self):
        with pytest.raises(ValueError):
            ResultPair.canonical(4, 4, 1.0)


class TestThreshold:
    def test_valid_range(self):
        assert check_threshold(0.5) == 0.5

    @pytest.mark.parametrize("bad", [0.0, 1.0, -0.2, 1.7])
    def test_invalid_rejected(self, bad):
        with pytest.raises(ValueError):
            check_threshold(bad)


class TestDataset:
    def test_from_token_lists_cleans_records(self):
        ds = Dataset.from_token_lists([[3, 1, 2, 2], [7], [10, 20], [10, 20]])
        # singleton dropped, duplicate dropped, tokens remapped dense
        assert len(ds) == 2
        assert ds.d == 5
        assert all(np.all(np.diff(r.tokens) > 0) for r in ds.records)

    def test_token_frequency_counts_records(self):
        ds = Dataset.from_token_lists([[0, 1], [1, 2], [0, 1, 2]])
        recount = np.zeros(ds.d, dtype=int)
        for r in ds.records:
            for t in r.tokens:
                recount[t] += 1
        assert np.array_equal(ds.token_frequency, recount)

    def test_csr_matches_records(self):
        ds = Dataset.from_token_lists([[0, 2], [1, 2, 3], [0, 3]])
        m = ds.csr().toarray()
        for r in ds.records:
            row = np.zeros(ds.d, dtype=int)
            row[r.tokens] = 1
            assert np.array_equal(m[r.id], row)


class TestCounters:
    def test_merge_sums_and_maxes(self):
        a = Counters(10, 5, 2, max_depth=3, peak_live_members=40)
        b = Counters(7, 1, 1, max_depth=5, peak_live_members=20)
        a.merge(b)
        assert (a.pre_candidates, a.candidates, a.results) == (17, 6, 3)
        assert a.max_depth == 5
        assert a.peak_live_members == 40
