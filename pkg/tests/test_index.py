"""Tests for anchor selection, index building, sub-indexes and index files."""

import numpy as np
import pytest

from anncur.errors import (DegenerateError, FormatError, SpecError,
                           SquareAnchorWarning)
from anncur.index import (AnchorSet, CurIndex, build_index, load_index,
                          save_index, select_anchors)
from anncur.oracle import MatrixOracle, SyntheticSpec, generate


class TestSelectAnchors:
    def test_exhaustive_queries(self):
        anchors = select_anchors(5, 9, 5, 3, seed=0)
        assert sorted(anchors.anchor_queries) == list(range(5))

    def test_deterministic(self):
        a = select_anchors(100, 200, 10, 20, seed=42)
        b = select_anchors(100, 200, 10, 20, seed=42)
        np.testing.assert_array_equal(a.anchor_queries, b.anchor_queries)
        np.testing.assert_array_equal(a.anchor_items, b.anchor_items)

    def test_distinct_and_in_range(self):
        anchors = select_anchors(50, 70, 20, 30, seed=7)
        assert np.unique(anchors.anchor_queries).size == 20
        assert np.unique(anchors.anchor_items).size == 30
        assert anchors.anchor_items.max() < 70

    def test_uniform_frequency(self):
        # Monte Carlo: selecting k=10 of n=100, each id should appear in
        # ~10% of runs. 1000 trials put the +/-0.05 band at >5 sigma.
        trials = 1000
        counts = np.zeros(100)
        for seed in range(1, trials + 1):
            anchors = select_anchors(100, 10, 10, 1, seed=seed)
            counts[anchors.anchor_queries] += 1
        freq = counts / trials
        assert np.all(np.abs(freq - 0.10) <= 0.05)

    def test_invalid_counts(self):
        with pytest.raises(SpecError):
            select_anchors(10, 10, 0, 5, seed=0)
        with pytest.raises(SpecError):
            select_anchors(10, 10, 11, 5, seed=0)
        with pytest.raises(SpecError):
            select_anchors(10, 10, 5, 5, seed=0, strategy="levered")


def identity_index():
    oracle = MatrixOracle(np.eye(4))
    anchors = AnchorSet(anchor_queries=np.array([0, 1]),
                        anchor_items=np.array([0, 1]), seed=0)
    with pytest.warns(SquareAnchorWarning):
        index = build_index(oracle, anchors)
    return oracle, index


class TestBuildIndex:
    def test_identity_hand_value(self):
        _, index = identity_index()
        np.testing.assert_allclose(
            index.item_embeddings,
            [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]], atol=1e-14)

    def test_build_cost_and_ledger(self):
        oracle = generate(SyntheticSpec("low_rank", 30, 50, 4, seed=1))
        anchors = select_anchors(30, 50, 8, 6, seed=2)
        before = oracle.call_count
        index = build_index(oracle, anchors)
        assert index.build_cost == 8 * 50
        assert oracle.call_count - before == 8 * 50

    def test_cost_law_random_configs(self):
        rng = np.random.default_rng(0)
        for _ in range(15):
            n_q = int(rng.integers(5, 40))
            n_i = int(rng.integers(5, 60))
            r = int(rng.integers(1, min(n_q, n_i) + 1))
            oracle = generate(SyntheticSpec("low_rank", n_q, n_i, r,
                                            seed=int(rng.integers(1 << 31))))
            k_q = int(rng.integers(1, n_q + 1))
            k_i = int(rng.integers(1, n_i + 1))
            anchors = select_anchors(n_q, n_i, k_q, k_i,
                                     seed=int(rng.integers(1 << 31)))
            before = oracle.call_count
            import warnings
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", SquareAnchorWarning)
                index = build_index(oracle, anchors)
            assert oracle.call_count - before == k_q * n_i
            assert index.build_cost == k_q * n_i

    def test_heldout_rows_recovered(self):
        oracle = generate(SyntheticSpec("low_rank", 60, 120, 5, seed=3))
        anchors = select_anchors(60, 120, 20, 25, seed=4)
        index = build_index(oracle, anchors)
        m = oracle.unmetered.score_rows(np.arange(60))
        held_out = np.setdiff1d(np.arange(60), anchors.anchor_queries)
        for q in held_out:
            e = m[q, anchors.anchor_items]
            approx = e @ index.item_embeddings
            err = np.linalg.norm(approx - m[q]) / np.linalg.norm(m[q])
            assert err < 1e-8

    def test_anchor_score_consistency(self):
        # An anchor query's own embedding row reproduces the skeleton product
        # of the anchor block, and on a full-rank instance the raw row itself.
        oracle = generate(SyntheticSpec("low_rank", 40, 80, 4, seed=5))
        anchors = select_anchors(40, 80, 10, 12, seed=6)
        index = build_index(oracle, anchors)
        scores = index.anchor_scores
        block = scores[:, anchors.anchor_items]
        skeleton = block @ index.item_embeddings
        np.testing.assert_allclose(skeleton, scores, atol=1e-9)

    def test_square_anchor_warning(self):
        oracle = generate(SyntheticSpec("low_rank", 20, 30, 3, seed=7))
        anchors = select_anchors(20, 30, 6, 6, seed=8)
        with pytest.warns(SquareAnchorWarning):
            build_index(oracle, anchors)

    def test_build_deterministic_bits(self):
        spec = SyntheticSpec("low_rank_noisy", 25, 40, 5, noise_sigma=0.1, seed=9)
        anchors = select_anchors(25, 40, 8, 10, seed=10)
        e1 = build_index(generate(spec), anchors).item_embeddings
        e2 = build_index(generate(spec), anchors).item_embeddings
        np.testing.assert_array_equal(e1, e2)

    def test_workers_match_serial(self):
        spec = SyntheticSpec("low_rank_noisy", 25, 40, 5, noise_sigma=0.1, seed=9)
        anchors = select_anchors(25, 40, 8, 10, seed=10)
        serial = build_index(generate(spec), anchors)
        parallel = build_index(generate(spec), anchors, workers=4)
        np.testing.assert_array_equal(serial.item_embeddings,
                                      parallel.item_embeddings)

    def test_all_zero_anchor_block(self):
        oracle = MatrixOracle(np.zeros((4, 4)))
        anchors = AnchorSet(anchor_queries=np.array([0, 1]),
                            anchor_items=np.array([2, 3, 1]), seed=0)
        with pytest.raises(DegenerateError):
            build_index(oracle, anchors)

    def test_bad_anchor_ids(self):
        oracle = MatrixOracle(np.eye(4))
        anchors = AnchorSet(anchor_queries=np.array([0, 9]),
                            anchor_items=np.array([0]), seed=0)
        with pytest.raises(SpecError):
            build_index(oracle, anchors)


class TestSubIndex:
    def test_prefix_matches_direct_build(self):
        oracle = generate(SyntheticSpec("low_rank_noisy", 30, 60, 5,
                                        noise_sigma=0.05, seed=11))
        anchors = select_anchors(30, 60, 10, 20, seed=12)
        index = build_index(oracle, anchors)
        sub = index.sub_index(8)
        direct_anchors = AnchorSet(anchor_queries=anchors.anchor_queries,
                                   anchor_items=anchors.anchor_items[:8],
                                   seed=anchors.seed)
        direct = build_index(generate(oracle.spec), direct_anchors)
        np.testing.assert_array_equal(sub.item_embeddings,
                                      direct.item_embeddings)

    def test_cache_and_identity(self):
        oracle = generate(SyntheticSpec("low_rank", 20, 40, 3, seed=13))
        anchors = select_anchors(20, 40, 6, 10, seed=14)
        index = build_index(oracle, anchors)
        assert index.sub_index(index.k_i) is index
        assert index.sub_index(4) is index.sub_index(4)

    def test_costs_no_oracle_calls(self):
        oracle = generate(SyntheticSpec("low_rank", 20, 40, 3, seed=13))
        anchors = select_anchors(20, 40, 6, 10, seed=14)
        index = build_index(oracle, anchors)
        before = oracle.call_count
        index.sub_index(5)
        assert oracle.call_count == before

    def test_loaded_index_cannot_subindex(self, tmp_path):
        oracle = generate(SyntheticSpec("low_rank", 20, 40, 3, seed=13))
        anchors = select_anchors(20, 40, 6, 10, seed=14)
        index = build_index(oracle, anchors)
        path = tmp_path / "i.anci"
        save_index(index, path)
        loaded = load_index(path)
        with pytest.raises(SpecError):
            loaded.sub_index(4)

    def test_range_check(self):
        oracle = generate(SyntheticSpec("low_rank", 20, 40, 3, seed=13))
        index = build_index(oracle, select_anchors(20, 40, 6, 10, seed=14))
        with pytest.raises(SpecError):
            index.sub_index(0)
        with pytest.raises(SpecError):
            index.sub_index(11)


class TestIndexFiles:
    def build(self):
        oracle = generate(SyntheticSpec("low_rank_noisy", 25, 45, 4,
                                        noise_sigma=0.02, seed=15))
        anchors = select_anchors(25, 45, 7, 9, seed=16)
        return build_index(oracle, anchors, rcond=1e-9)

    def test_round_trip_bit_exact(self, tmp_path):
        index = self.build()
        path = tmp_path / "i.anci"
        save_index(index, path)
        loaded = load_index(path)
        np.testing.assert_array_equal(loaded.item_embeddings,
                                      index.item_embeddings)
        np.testing.assert_array_equal(loaded.anchor_items, index.anchor_items)
        np.testing.assert_array_equal(loaded.anchor_queries,
                                      index.anchor_queries)
        assert loaded.rcond == index.rcond
        assert loaded.build_cost == index.build_cost
        assert loaded.anchor_scores is None

    def test_save_load_save_idempotent(self, tmp_path):
        index = self.build()
        p1, p2 = tmp_path / "a.anci", tmp_path / "b.anci"
        save_index(index, p1)
        save_index(load_index(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "i.anci"
        save_index(self.build(), path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"JUNK"
        path.write_bytes(raw)
        with pytest.raises(FormatError):
            load_index(path)

    def test_truncation(self, tmp_path):
        path = tmp_path / "i.anci"
        save_index(self.build(), path)
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(FormatError):
            load_index(path)

    def test_large_item_count_metadata(self, tmp_path):
        # Round trip the metadata of an index over a big item universe.
        index = CurIndex(anchor_items=np.arange(2, dtype=np.int64),
                         anchor_queries=np.arange(3, dtype=np.int64),
                         item_embeddings=np.zeros((2, 10031)),
                         rcond=1e-12, build_cost=3 * 10031)
        path = tmp_path / "i.anci"
        save_index(index, path)
        assert load_index(path).n_items == 10031
