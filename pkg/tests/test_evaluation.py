"""Ranking metrics, binned reports, and the drop audit."""

import math

import numpy as np
import pytest

from freqrec import evaluation as E
from freqrec import model as M
from freqrec.augment import AugmentationConfig
from freqrec.corpus import (
    Corpus,
    FrequencyBins,
    FrequencyTable,
    InteractionSequence,
    ItemVocab,
    assign_frequency_bins,
    build_frequency_table,
    tercile_edges,
)
from freqrec.rng import DOMAIN_INIT, RngStream
from freqrec.synth import SyntheticSpec, generate_synthetic


def sort_rank_oracle(scores, target):
    """Definitional rank: sort by (-score, index), find the target."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return order.index(target) + 1


def make_params(num_items=10, seed=0):
    cfg = M.ModelConfig(embed_dim=8, num_layers=1, num_heads=2, max_len=10)
    return M.init_params(cfg, num_items, RngStream(seed, DOMAIN_INIT))


class TestRankTarget:
    def test_unique_maximum(self):
        p = make_params()
        emb = p["item_emb"].data
        h = emb[4].copy() * 10  # strongly aligned with item 4
        assert E.rank_target(h, p, 4) == sort_rank_oracle(emb @ h, 4)

    def test_all_equal_scores_smallest_index_first(self):
        p = make_params()
        h = np.zeros(8)
        assert E.rank_target(h, p, 0) == 1
        assert E.rank_target(h, p, 5) == 6

    def test_matches_sort_oracle_randomized(self):
        p = make_params(num_items=10)
        g = np.random.Generator(np.random.PCG64(3))
        for _ in range(300):
            h = g.normal(size=8)
            scores = h @ p["item_emb"].data.T
            t = int(g.integers(0, 10))
            assert E.rank_target(h, p, t) == sort_rank_oracle(scores, t)

    def test_batch_matches_singular(self):
        p = make_params(num_items=15, seed=2)
        g = np.random.Generator(np.random.PCG64(4))
        H = g.normal(size=(6, 8))
        targets = g.integers(0, 15, size=6)
        batch = E.rank_targets_batch(H, p["item_emb"].data, targets)
        for i in range(6):
            assert batch[i] == E.rank_target(H[i], p, int(targets[i]))


class TestHrNdcg:
    def test_hr_closed_forms(self):
        assert E.hr_at_k([1], 5) == 1.0
        assert E.hr_at_k([7], 5) == 0.0
        assert E.hr_at_k([7], 10) == 1.0
        assert E.hr_at_k([1, 6, 11], 10) == pytest.approx(2 / 3)

    def test_ndcg_closed_forms(self):
        assert E.ndcg_at_k([1], 10) == 1.0
        assert E.ndcg_at_k([2], 10) == pytest.approx(1 / math.log2(3))
        assert E.ndcg_at_k([11], 10) == 0.0

    def test_monotone_in_k(self):
        g = np.random.Generator(np.random.PCG64(5))
        ranks = list(g.integers(1, 50, size=200))
        hr = [E.hr_at_k(ranks, k) for k in range(1, 50)]
        nd = [E.ndcg_at_k(ranks, k) for k in range(1, 50)]
        assert all(a <= b for a, b in zip(hr, hr[1:]))
        assert all(a <= b for a, b in zip(nd, nd[1:]))

    def test_ndcg_bounded_by_hr(self):
        g = np.random.Generator(np.random.PCG64(6))
        for _ in range(20):
            ranks = list(g.integers(1, 30, size=50))
            for k in (1, 5, 10):
                assert E.ndcg_at_k(ranks, k) <= E.hr_at_k(ranks, k) + 1e-15

    def test_brute_force_definitions(self):
        g = np.random.Generator(np.random.PCG64(7))
        ranks = list(g.integers(1, 25, size=100))
        k = 10
        hr_oracle = sum(1 for r in ranks if r <= k) / len(ranks)
        nd_oracle = (
            sum((1 / math.log2(r + 1)) if r <= k else 0.0 for r in ranks) / len(ranks)
        )
        assert E.hr_at_k(ranks, k) == hr_oracle
        assert E.ndcg_at_k(ranks, k) == pytest.approx(nd_oracle)

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            E.hr_at_k([1], 0)
        with pytest.raises(ValueError):
            E.ndcg_at_k([], 5)


class TestEvaluatePairs:
    def test_consistent_with_rank_target(self):
        p = make_params(num_items=12, seed=3)
        pairs = [("u0", (1, 2, 3), 4), ("u1", (5, 6), 7)]
        results = E.evaluate_pairs(p, p.config, pairs)
        for (user, inputs, target), res in zip(pairs, results):
            idx, lens = M.pad_batch([inputs])
            h = M.encode_batch(M.embed_batch(idx, p), lens, p, p.config, "eval")
            assert res.rank == E.rank_target(h.data[0], p, target)
            assert res.user == user
            assert res.target == target

    def test_long_input_truncated_to_max_len(self):
        p = make_params(num_items=12, seed=3)
        long_input = tuple([1, 2] * 12)
        results = E.evaluate_pairs(p, p.config, [("u", long_input, 3)])
        assert len(results) == 1


class TestBinnedMetrics:
    def test_hand_built_fixture(self):
        # 6 instances, bins by target count: low {a}, medium {b}, high {c}
        freq = FrequencyTable({0: 1, 1: 10, 2: 100})
        item_bins = assign_frequency_bins(freq, [5, 50])
        user_bins = FrequencyBins(edges=(4,), labels=("short", "long"))
        results = [
            E.RankedResult("u0", 0, 1),    # low, hit
            E.RankedResult("u1", 0, 20),   # low, miss
            E.RankedResult("u2", 1, 2),    # medium, hit
            E.RankedResult("u3", 2, 3),    # high, hit
            E.RankedResult("u4", 2, 11),   # high, miss
            E.RankedResult("u5", 2, 10),   # high, hit (boundary)
        ]
        lengths = {"u0": 2, "u1": 9, "u2": 3, "u3": 8, "u4": 2, "u5": 4}
        report = E.binned_metrics(results, item_bins, user_bins, freq, lengths)
        by_label = {b.label: b for b in report.item_bins}
        assert by_label["low"].count == 2
        assert by_label["low"].hr10 == pytest.approx(0.5)
        assert by_label["medium"].hr10 == 1.0
        assert by_label["high"].count == 3
        assert by_label["high"].hr10 == pytest.approx(2 / 3)
        assert by_label["high"].ndcg10 == pytest.approx(
            (1 / math.log2(4) + 0 + 1 / math.log2(11)) / 3
        )
        users = {b.label: b for b in report.user_bins}
        # lengths below the edge 4: u0 (2), u2 (3), u4 (2); u5 sits exactly on
        # the left-closed edge and lands in "long"
        assert users["short"].count == 3
        assert users["long"].count == 3

    def test_counts_partition_population(self):
        freq = FrequencyTable({i: i + 1 for i in range(10)})
        item_bins = assign_frequency_bins(freq, [3, 7])
        user_bins = FrequencyBins(edges=(), labels=("all",))
        g = np.random.Generator(np.random.PCG64(8))
        results = [
            E.RankedResult(f"u{i}", int(g.integers(0, 10)), int(g.integers(1, 30)))
            for i in range(40)
        ]
        report = E.binned_metrics(results, item_bins, user_bins, freq, {})
        assert sum(b.count for b in report.item_bins) == 40
        assert sum(b.count for b in report.user_bins) == 40

    def test_empty_bin_reports_absent(self):
        freq = FrequencyTable({0: 1, 1: 100})
        item_bins = assign_frequency_bins(freq, [5, 50])
        user_bins = FrequencyBins(edges=(), labels=("all",))
        results = [E.RankedResult("u", 1, 1)]
        report = E.binned_metrics(results, item_bins, user_bins, freq, {"u": 3})
        by_label = {b.label: b for b in report.item_bins}
        assert by_label["medium"].count == 0
        assert by_label["medium"].hr10 is None
        assert by_label["medium"].ndcg10 is None

    def test_all_in_one_bin_equals_overall(self):
        freq = FrequencyTable({3: 7})
        item_bins = assign_frequency_bins(freq, [])
        user_bins = FrequencyBins(edges=(), labels=("all",))
        results = [E.RankedResult(f"u{i}", 3, r) for i, r in enumerate([1, 5, 12])]
        report = E.binned_metrics(results, item_bins, user_bins, freq, {})
        assert report.item_bins[0].hr10 == report.overall["hr@10"]
        assert report.item_bins[0].ndcg10 == report.overall["ndcg@10"]


def audit_corpus():
    raw = generate_synthetic(
        SyntheticSpec(
            num_users=150, num_items=60, zipf_exponent=1.2, min_len=12, max_len=25, seed=4
        )
    )
    vocab = ItemVocab(raw.vocabulary)
    corpus = Corpus.build(
        InteractionSequence(s.user, vocab.encode(s.items)) for s in raw.sequences
    )
    freq = build_frequency_table(corpus)
    bins = assign_frequency_bins(freq, tercile_edges(freq.counts.values()))
    return corpus, freq, bins


class TestDropAudit:
    def test_uniform_policy_rate_near_gamma(self):
        corpus, freq, bins = audit_corpus()
        cfg = AugmentationConfig(gamma=0.3)
        rows = E.drop_audit(corpus, freq, bins, cfg, policy="uniform", trials=20_000, seed=1)
        for r in rows:
            assert abs(r.observed_rate - 0.3) < 0.02
            assert r.expected_rate == pytest.approx(0.3)

    def test_gamma_zero_never_drops(self):
        corpus, freq, bins = audit_corpus()
        cfg = AugmentationConfig(gamma=0.0)
        for policy in ("uniform", "adaptive"):
            rows = E.drop_audit(corpus, freq, bins, cfg, policy=policy, trials=2_000, seed=2)
            for r in rows:
                assert r.observed_rate == 0.0

    def test_adaptive_policy_directional(self):
        corpus, freq, bins = audit_corpus()
        cfg = AugmentationConfig(gamma=0.3)
        rows = E.drop_audit(corpus, freq, bins, cfg, policy="adaptive", trials=30_000, seed=3)
        rates = [r.observed_rate for r in rows]
        # monotone non-decreasing across frequency-ordered bins, small slack
        assert all(a <= b + 0.02 for a, b in zip(rates, rates[1:]))
        assert rates[0] < 0.3
        assert rows[0].observed_rate == pytest.approx(rows[0].expected_rate, abs=0.02)

    def test_observed_tracks_expected(self):
        corpus, freq, bins = audit_corpus()
        cfg = AugmentationConfig(gamma=0.4)
        rows = E.drop_audit(corpus, freq, bins, cfg, policy="adaptive", trials=30_000, seed=4)
        for r in rows:
            assert abs(r.observed_rate - r.expected_rate) < 0.02

    def test_deterministic_by_seed(self):
        corpus, freq, bins = audit_corpus()
        cfg = AugmentationConfig(gamma=0.3)
        a = E.drop_audit(corpus, freq, bins, cfg, trials=2_000, seed=9)
        b = E.drop_audit(corpus, freq, bins, cfg, trials=2_000, seed=9)
        assert a == b

    def test_minimum_trials_enforced(self):
        corpus, freq, bins = audit_corpus()
        with pytest.raises(ValueError):
            E.drop_audit(corpus, freq, bins, AugmentationConfig(), trials=10)
