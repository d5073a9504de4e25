import csv
import itertools

import numpy as np
import pytest

from conftest import random_graph
from slotalign.graph import AnchorSet
from slotalign.matching import (
    extract_one_to_one,
    format_metrics,
    hit_at_k,
    knn_align,
    matching_mass,
    parse_metrics,
    rank_candidates,
    summarize,
    write_results,
)


def identity_anchors(n):
    return AnchorSet([(i, i) for i in range(n)])


def brute_force_best(plan):
    n, m = plan.shape
    best = -np.inf
    for cols in itertools.permutations(range(m), n):
        best = max(best, sum(plan[i, c] for i, c in enumerate(cols)))
    return best


class TestRankCandidates:
    def test_identity(self):
        idx, _ = rank_candidates(np.eye(4) / 4, 1)
        np.testing.assert_array_equal(idx[:, 0], np.arange(4))

    def test_uniform_ties_by_index(self):
        idx, _ = rank_candidates(np.full((5, 4), 0.05), 3)
        np.testing.assert_array_equal(idx, np.tile([0, 1, 2], (4, 1)))

    def test_hand_example(self):
        plan = np.array([[0.4, 0.1], [0.2, 0.3]])
        idx, scores = rank_candidates(plan, 1)
        np.testing.assert_array_equal(idx[:, 0], [0, 1])
        np.testing.assert_array_equal(scores[:, 0], [0.4, 0.3])
        idx, _ = rank_candidates(plan, 1, direction="source->target")
        np.testing.assert_array_equal(idx[:, 0], [0, 1])

    def test_k_truncated(self):
        idx, _ = rank_candidates(np.ones((2, 3)), 10)
        assert idx.shape == (3, 2)

    def test_bad_args(self):
        with pytest.raises(ValueError):
            rank_candidates(np.ones((2, 2)), 0)
        with pytest.raises(ValueError):
            rank_candidates(np.ones((2, 2)), 1, direction="sideways")

    def test_sorted_and_rescale_invariant(self, rng):
        for _ in range(20):
            plan = rng.random((6, 7))
            idx, scores = rank_candidates(plan, 4)
            assert np.all(np.diff(scores, axis=1) <= 0)
            idx2, _ = rank_candidates(plan * rng.uniform(0.01, 100), 4)
            np.testing.assert_array_equal(idx, idx2)


class TestHitAtK:
    def test_identity(self):
        hits = hit_at_k(np.eye(3) / 3, identity_anchors(3), (1, 5))
        assert hits == {1: 100.0, 5: 100.0}

    def test_one_of_three_second(self):
        # target column 2 prefers source 0; its truth (source 2) ranks second
        plan = np.array([
            [0.30, 0.00, 0.05],
            [0.00, 0.30, 0.00],
            [0.03, 0.03, 0.04],
        ])
        hits = hit_at_k(plan, identity_anchors(3), (1, 2))
        assert hits[1] == pytest.approx(200 / 3)
        assert hits[2] == 100.0
        # enumeration oracle
        for k in (1, 2):
            found = sum(j in np.argsort(-plan[:, j], kind="stable")[:k] for j in range(3))
            assert hits[k] == pytest.approx(100 * found / 3)

    def test_uniform_tie_break(self):
        assert hit_at_k(np.full((3, 3), 1 / 9), AnchorSet([(0, 0)]), (1,)) == {1: 100.0}
        assert hit_at_k(np.full((3, 3), 1 / 9), AnchorSet([(2, 0)]), (1, 2, 3)) == {1: 0.0, 2: 0.0, 3: 100.0}

    def test_empty_anchors(self):
        with pytest.raises(ValueError):
            hit_at_k(np.eye(2), AnchorSet(np.zeros((0, 2), dtype=int)))

    def test_agrees_with_ranking(self, rng):
        for _ in range(20):
            plan = rng.integers(0, 3, size=(6, 6)).astype(float)
            anchors = AnchorSet(list(zip(rng.permutation(6), range(6))))
            hits = hit_at_k(plan, anchors, range(1, 7))
            idx, _ = rank_candidates(plan, 6)
            for k in range(1, 7):
                found = sum(s in idx[t, :k] for s, t in anchors.pairs)
                assert hits[k] == pytest.approx(100 * found / 6)
            values = [hits[k] for k in range(1, 7)]
            assert values == sorted(values)

    def test_direction_flag(self):
        plan = np.array([[0.0, 1.0], [0.0, 0.0]])
        anchors = AnchorSet([(0, 1)])
        assert hit_at_k(plan, anchors, (1,))[1] == 100.0
        assert hit_at_k(plan, anchors, (1,), direction="source->target")[1] == 100.0
        assert hit_at_k(plan, AnchorSet([(1, 1)]), (1,), direction="source->target")[1] == 0.0


class TestExtract:
    def test_permutation(self, rng):
        perm = rng.permutation(6)
        plan = np.zeros((6, 6))
        plan[np.arange(6), perm] = 1 / 6
        expected = sorted(zip(range(6), perm.tolist()))
        assert extract_one_to_one(plan) == expected
        assert extract_one_to_one(plan, exact=True) == expected

    def test_greedy_vs_exact(self):
        plan = np.array([[0.5, 0.4], [0.45, 0.1]])
        greedy = extract_one_to_one(plan)
        exact = extract_one_to_one(plan, exact=True)
        assert greedy == [(0, 0), (1, 1)]
        assert exact == [(0, 1), (1, 0)]
        assert matching_mass(plan, greedy) == pytest.approx(0.6)
        assert matching_mass(plan, exact) == pytest.approx(0.85)

    def test_flat_coupling_index_order(self):
        assert extract_one_to_one(np.full((3, 4), 1e-30)) == [(0, 0), (1, 1), (2, 2)]

    def test_exact_dominates_greedy(self, rng):
        for _ in range(30):
            n, m = (int(v) for v in rng.integers(1, 6, size=2))
            if n > m:
                n, m = m, n
            plan = rng.random((n, m))
            greedy = extract_one_to_one(plan)
            exact = extract_one_to_one(plan, exact=True)
            for pairs in (greedy, exact):
                assert len({i for i, _ in pairs}) == len(pairs) == len({j for _, j in pairs}) == n
            assert matching_mass(plan, exact) >= matching_mass(plan, greedy) - 1e-15
            assert matching_mass(plan, exact) == pytest.approx(brute_force_best(plan))


class TestKNN:
    def test_same_features(self, rng):
        g = random_graph(rng, 8, d=5)
        assert knn_align(g, g, anchors=identity_anchors(8)).hits[1] == 100.0

    def test_swapped_rows(self, rng):
        g = random_graph(rng, 8, d=5)
        x = g.features.copy()
        x[[2, 5]] = x[[5, 2]]
        res = knn_align(g, g.with_features(x), k=8, anchors=identity_anchors(8), ks=(1,))
        assert res.hits[1] == pytest.approx(75.0)
        assert res.topk[2, 0] == 5 and res.topk[5, 0] == 2
        others = [t for t in range(8) if t not in (2, 5)]
        np.testing.assert_array_equal(res.topk[others, 0], others)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ValueError):
            knn_align(random_graph(rng, 4, d=2), random_graph(rng, 4, d=3))


class TestIO:
    def test_results_csv(self, tmp_path):
        plan = np.array([[0.4, 0.1], [0.2, 0.3]])
        res = summarize(plan, k=2, anchors=identity_anchors(2), ks=(1,), one_to_one=True)
        write_results(res, tmp_path / "m.csv")
        rows = list(csv.reader(open(tmp_path / "m.csv")))
        assert rows[0] == ["target_index", "rank1_source", "score1", "rank2_source", "score2"]
        assert rows[1][:3] == ["0", "0", "0.4"]
        assert res.one_to_one == [(0, 0), (1, 1)]

    def test_metrics_round_trip(self):
        hits = {1: 100.0, 5: 66.666666, 30: 0.0}
        text = format_metrics(hits)
        assert text.splitlines()[0] == "Hit@1: 100.00"
        assert parse_metrics(text) == {1: 100.0, 5: 66.67, 30: 0.0}
