"""Tests for NDCG evaluation, the repeated-split driver, and the ablation grid."""

import itertools
import math

import numpy as np
import pytest

from oracles import brute_ndcg, hand_dataset
from topnrank.data import split_half
from topnrank.evaluation import (
    ABLATION_VARIANTS,
    DEFAULT_CUTOFFS,
    AblationReport,
    ExperimentReport,
    SplitMetrics,
    derived_seed,
    evaluate_model,
    ndcg_at_n,
    ndcg_report,
    run_ablation,
    run_experiment,
)
from topnrank.model import FactorModel, init_model
from topnrank.synthetic import uniform_dataset
from topnrank.training import TrainConfig, train

# independently recomputed with stdlib math and frozen:
# ranked relevance (1, 0, 1) at cutoff 3 against ideal (1, 1, 0)
NDCG_101_AT_3 = 0.9197207891481874


class TestNdcgAtN:
    def test_frozen_value(self):
        got = ndcg_at_n([3.0, 2.0, 1.0], [1, 0, 1], n=3)
        assert got == pytest.approx(NDCG_101_AT_3, abs=1e-12)

    def test_perfect_ranking_is_one(self):
        got = ndcg_at_n([5.0, 4.0, 3.0, 2.0], [1, 1, 0, 0], n=4)
        assert got == pytest.approx(1.0, abs=1e-12)

    def test_no_relevant_item_returns_none(self):
        assert ndcg_at_n([1.0, 2.0], [0, 0], n=2) is None

    def test_bad_cutoff_rejected(self):
        with pytest.raises(ValueError):
            ndcg_at_n([1.0], [1], n=0)

    def test_cutoff_beyond_length(self):
        a = ndcg_at_n([2.0, 1.0], [0, 1], n=2)
        b = ndcg_at_n([2.0, 1.0], [0, 1], n=50)
        assert a == pytest.approx(b, abs=1e-12)

    def test_log_base_cancels(self):
        scores = [0.3, -1.2, 2.0, 0.9, 0.0]
        rel = [1, 0, 0, 1, 1]
        e_base = ndcg_at_n(scores, rel, n=3, log_base=math.e)
        two = ndcg_at_n(scores, rel, n=3, log_base=2.0)
        ten = ndcg_at_n(scores, rel, n=3, log_base=10.0)
        assert e_base == pytest.approx(two, abs=1e-12)
        assert e_base == pytest.approx(ten, abs=1e-12)

    def test_positive_affine_invariance(self):
        scores = np.array([0.3, -1.2, 2.0, 0.9, 0.0])
        rel = [1, 0, 0, 1, 1]
        base = ndcg_at_n(scores, rel, n=3)
        assert ndcg_at_n(4.0 * scores - 7.0, rel, n=3) == pytest.approx(base, abs=1e-12)

    def test_ties_break_by_position(self):
        tied = [1.0, 1.0]
        assert ndcg_at_n(tied, [0, 1], n=1) == 0.0
        assert ndcg_at_n(tied, [1, 0], n=1) == pytest.approx(1.0)

    def test_promoting_relevant_item_helps(self):
        rel = [0, 1, 0, 1]
        worse = ndcg_at_n([4.0, 3.0, 2.0, 1.0], rel, n=4)
        better = ndcg_at_n([3.0, 4.0, 2.0, 1.0], rel, n=4)
        assert better > worse

    def test_matches_bruteforce_small(self):
        rng = np.random.default_rng(12)
        for _ in range(60):
            m = int(rng.integers(1, 6))
            scores = rng.normal(size=m)
            rel = rng.integers(0, 2, size=m)
            for n in (1, 2, 3, m):
                expect = brute_ndcg(scores, rel, n)
                got = ndcg_at_n(scores, rel, n)
                if expect is None:
                    assert got is None
                else:
                    assert got == pytest.approx(expect, abs=1e-12)

    def test_exhaustive_orderings_up_to_four(self):
        for m in (1, 2, 3, 4):
            for perm in itertools.permutations(range(m)):
                scores = np.array(perm, dtype=float)
                for bits in itertools.product((0, 1), repeat=m):
                    rel = np.array(bits)
                    for n in range(1, m + 1):
                        expect = brute_ndcg(scores, rel, n)
                        got = ndcg_at_n(scores, rel, n)
                        if expect is None:
                            assert got is None
                        else:
                            assert got == pytest.approx(expect, abs=1e-12)


class TestDerivedSeed:
    def test_matches_seed_sequence(self):
        expect = int(np.random.SeedSequence([4, 2]).generate_state(1)[0])
        assert derived_seed(4, 2) == expect

    def test_deterministic_and_sensitive(self):
        assert derived_seed(0, 1, 0) == derived_seed(0, 1, 0)
        assert derived_seed(0, 1, 0) != derived_seed(0, 1, 1)
        assert derived_seed(0, 1) != derived_seed(1, 0)


class TestNdcgReport:
    def test_counts_and_means(self):
        model = FactorModel(
            user_factors=np.eye(3),
            item_factors=np.array([[3.0, 1.0, 0.0], [1.0, 3.0, 0.0]]),
        )
        per_user = [
            (0, np.array([0, 1]), np.array([1, 0])),
            (1, np.array([0, 1]), np.array([0, 1])),
            (2, np.array([0, 1]), np.array([0, 0])),  # excluded, nothing relevant
        ]
        report = ndcg_report(model, per_user, cutoffs=(1, 2))
        assert report.n_included == 2
        assert report.n_excluded == 1
        u0 = {n: ndcg_at_n(model.scores(0, per_user[0][1]), per_user[0][2], n) for n in (1, 2)}
        u1 = {n: ndcg_at_n(model.scores(1, per_user[1][1]), per_user[1][2], n) for n in (1, 2)}
        for n in (1, 2):
            assert report.means[n] == pytest.approx((u0[n] + u1[n]) / 2, abs=1e-12)
        assert report.rows() == [
            (1, report.means[1], 2, 1),
            (2, report.means[2], 2, 1),
        ]

    def test_all_excluded_raises(self):
        model = FactorModel(user_factors=np.eye(1), item_factors=np.eye(1))
        with pytest.raises(ValueError):
            ndcg_report(model, [(0, np.array([0]), np.array([0]))])

    def test_evaluate_model_consistent_with_report(self):
        dataset = hand_dataset(
            [[0, 1, 2], [1, 3]],
            [[1.0, -1.0, 1.0], [1.0, -1.0]],
            [[1, 0, 1], [1, 0]],
            n_items=4,
        )
        model = init_model(2, 4, 3, np.random.default_rng(2))
        direct = evaluate_model(model, dataset, cutoffs=(1, 3))
        via_report = ndcg_report(
            model,
            [(u, dataset.items[u], dataset.relevance[u]) for u in range(2)],
            cutoffs=(1, 3),
        )
        assert direct == via_report

    def test_perfect_model_scores_one(self):
        # scoring by the true relevance ranks every relevant item on top
        dataset = uniform_dataset(12, 30, 8, seed=9)
        user_rows = np.zeros((12, 30))
        for u in range(12):
            user_rows[u, dataset.items[u]] = dataset.relevance[u]
        oracle = FactorModel(user_factors=user_rows, item_factors=np.eye(30))
        metrics = evaluate_model(oracle, dataset)
        for n in DEFAULT_CUTOFFS:
            assert metrics.means[n] == pytest.approx(1.0, abs=1e-12)
        random_metrics = evaluate_model(
            init_model(12, 30, 4, np.random.default_rng(0)), dataset
        )
        assert random_metrics.means[10] < 1.0


class TestExperimentReport:
    def _report(self):
        a = SplitMetrics(cutoffs=(1, 5), means={1: 0.2, 5: 0.6}, n_included=3, n_excluded=0)
        b = SplitMetrics(cutoffs=(1, 5), means={1: 0.4, 5: 0.8}, n_included=3, n_excluded=1)
        return ExperimentReport(cutoffs=(1, 5), per_split=[a, b], split_seeds=[11, 22])

    def test_grand_mean(self):
        rep = self._report()
        assert rep.repeats == 2
        assert rep.grand_mean(1) == pytest.approx(0.3)
        assert rep.grand_mean(5) == pytest.approx(0.7)

    def test_grand_std_is_sample_std(self):
        rep = self._report()
        assert rep.grand_std(1) == pytest.approx(np.std([0.2, 0.4], ddof=1))

    def test_single_split_std_zero(self):
        rep = ExperimentReport(
            cutoffs=(1,),
            per_split=[SplitMetrics((1,), {1: 0.5}, 2, 0)],
            split_seeds=[7],
        )
        assert rep.grand_std(1) == 0.0

    def test_rows(self):
        rep = self._report()
        assert rep.rows() == [
            (1, rep.grand_mean(1), rep.grand_std(1)),
            (5, rep.grand_mean(5), rep.grand_std(5)),
        ]


class TestRunExperiment:
    CONFIG = TrainConfig(
        n_factors=3, lr=0.01, batch_fraction=1.0, max_iters=2, epsilon=0.0, seed=5
    )

    def test_single_repeat_matches_manual_pipeline(self):
        dataset = uniform_dataset(15, 40, 8, seed=1)
        report = run_experiment(dataset, self.CONFIG, repeats=1, cutoffs=(1, 5))
        split_seed = derived_seed(5, 0, 0)
        train_seed = derived_seed(5, 0, 1)
        pair = split_half(dataset, split_seed)
        model, _ = train(pair.train, self.CONFIG.with_overrides(seed=train_seed))
        manual = evaluate_model(model, pair.test, cutoffs=(1, 5))
        assert report.split_seeds == [split_seed]
        assert report.per_split[0] == manual

    def test_bad_repeats(self):
        dataset = uniform_dataset(6, 12, 4, seed=1)
        with pytest.raises(ValueError):
            run_experiment(dataset, self.CONFIG, repeats=0)

    def test_splits_shared_across_configs(self):
        dataset = uniform_dataset(12, 24, 6, seed=2)
        a = run_experiment(dataset, self.CONFIG, repeats=2, cutoffs=(1,))
        b = run_experiment(
            dataset, self.CONFIG.with_overrides(truncated=False), repeats=2, cutoffs=(1,)
        )
        assert a.split_seeds == b.split_seeds


class TestAblation:
    BASE = TrainConfig(n_factors=3, batch_fraction=1.0, max_iters=1, epsilon=0.0, seed=4)

    def test_grid_structure(self):
        dataset = uniform_dataset(14, 30, 6, seed=3)
        report = run_ablation(dataset, self.BASE, repeats=2, cutoffs=(1, 5))
        assert set(report.reports) == set(ABLATION_VARIANTS)
        seeds = {tuple(rep.split_seeds) for rep in report.reports.values()}
        assert len(seeds) == 1  # every variant saw the same splits
        rows = report.table_rows()
        assert len(rows) == 4 * 2
        assert [r[0] for r in rows[:2]] == ["Top-N-Rank.ReLU"] * 2
        for _, n, mean, std in rows:
            assert n in (1, 5)
            assert 0.0 <= mean <= 1.0
            assert std >= 0.0

    def test_lr_override_changes_only_that_variant(self):
        dataset = uniform_dataset(14, 30, 6, seed=3)
        base = run_ablation(dataset, self.BASE, repeats=1, cutoffs=(1, 5))
        bumped = run_ablation(
            dataset,
            self.BASE,
            repeats=1,
            cutoffs=(1, 5),
            lr_overrides={"Top-N-Rank.sgm": 0.4},
        )
        hero = "Top-N-Rank.ReLU"
        assert base.reports[hero].per_split == bumped.reports[hero].per_split
        a = base.reports["Top-N-Rank.sgm"].per_split[0].means
        b = bumped.reports["Top-N-Rank.sgm"].per_split[0].means
        assert a != b

    def test_splits_won_counting(self):
        def metrics(values):
            return SplitMetrics(
                cutoffs=(1, 3, 5),
                means=dict(zip((1, 3, 5), values)),
                n_included=1,
                n_excluded=0,
            )

        def report(split_values):
            return ExperimentReport(
                cutoffs=(1, 3, 5),
                per_split=[metrics(v) for v in split_values],
                split_seeds=list(range(len(split_values))),
            )

        hero = report([(0.5, 0.5, 0.5), (0.9, 0.1, 0.9), (0.1, 0.2, 0.3)])
        other = report([(0.5, 0.5, 0.5), (0.8, 0.2, 0.8), (0.2, 0.3, 0.2)])
        grid = AblationReport(
            cutoffs=(1, 3, 5),
            reports={"Top-N-Rank.ReLU": hero, "non-Top-N.ReLU": other},
        )
        # split 1: ties at every cutoff count for the hero (3 of 3)
        # split 2: hero leads at cutoffs 1 and 5 (2 of 3, a majority)
        # split 3: hero leads only at cutoff 5 (1 of 3, not a majority)
        assert grid.splits_won("Top-N-Rank.ReLU", "non-Top-N.ReLU") == 2
        assert grid.splits_won("non-Top-N.ReLU", "Top-N-Rank.ReLU") == 2
