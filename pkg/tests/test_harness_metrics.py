import logging
import math

import numpy as np
import pytest
import scipy.stats

from mmrobust.errors import DomainError, ShapeError
from mmrobust.harness.metrics import (
    MetricBundle,
    binary_auc,
    binary_average_precision,
    d_prime_from_auc,
    drop_rate,
    eval_metrics,
    norm_ppf,
    per_class_performance,
)


def pairwise_auc_oracle(scores, positives):
    """Brute-force Mann-Whitney: every (positive, negative) pair counted."""
    pos = scores[positives]
    neg = scores[~positives]
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (pos.size * neg.size)


def ap_oracle(scores, positives):
    """Precision at each positive's rank, computed pair by pair (no ties)."""
    total = 0.0
    pos_idx = np.nonzero(positives)[0]
    for i in pos_idx:
        higher = scores >= scores[i]
        total += positives[higher].sum() / higher.sum()
    return total / pos_idx.size


class TestNormPpf:
    def test_matches_scipy_to_1e9(self):
        grid = np.concatenate([
            np.linspace(1e-6, 0.02, 50), np.linspace(0.02, 0.98, 200),
            np.linspace(0.98, 1 - 1e-6, 50),
        ])
        for p in grid:
            assert abs(norm_ppf(float(p)) - scipy.stats.norm.ppf(p)) < 1e-9

    def test_median(self):
        assert norm_ppf(0.5) == pytest.approx(0.0, abs=1e-15)

    def test_domain(self):
        with pytest.raises(DomainError):
            norm_ppf(1.5)


class TestDPrime:
    def test_table_values(self):
        # measured fusion-quality rows: AUC 0.963 -> 2.521, 0.971 -> 2.686
        assert d_prime_from_auc(0.963) == pytest.approx(2.521, abs=0.02)
        assert d_prime_from_auc(0.971) == pytest.approx(2.686, abs=0.02)

    def test_chance_level(self):
        assert d_prime_from_auc(0.5) == pytest.approx(0.0, abs=1e-12)

    def test_round_trips_through_normal_cdf(self):
        for auc in np.linspace(0.51, 0.999, 100):
            d = d_prime_from_auc(float(auc))
            back = 0.5 * math.erfc(-(d / math.sqrt(2.0)) / math.sqrt(2.0))
            assert abs(back - auc) < 1e-6


class TestRankingMetrics:
    def test_perfect_ranking(self):
        scores = np.array([[0.9, 0.1], [0.8, 0.2], [0.1, 0.9], [0.2, 0.8]])
        labels = np.array([[1, 0], [1, 0], [0, 1], [0, 1]], dtype=float)
        bundle = eval_metrics(scores, labels, multi_label=False)
        assert bundle.mAP == 1.0
        assert bundle.AUC == 1.0
        assert bundle.accuracy == 1.0
        assert math.isinf(bundle.d_prime)

    def test_against_pairwise_oracle(self, rng):
        for _ in range(25):
            n = int(rng.integers(5, 200))
            scores = rng.standard_normal(n)
            positives = rng.random(n) < 0.4
            if positives.all() or not positives.any():
                continue
            assert binary_auc(scores, positives) == pytest.approx(
                pairwise_auc_oracle(scores, positives), abs=1e-9
            )
            assert binary_average_precision(scores, positives) == pytest.approx(
                ap_oracle(scores, positives), abs=1e-9
            )

    def test_matrix_oracle_agreement(self, rng):
        scores = rng.standard_normal((120, 4))
        labels = (rng.random((120, 4)) < 0.3).astype(float)
        labels[0] = [1, 1, 1, 1]  # make sure every class has a positive
        bundle = eval_metrics(scores, labels, multi_label=True)
        aucs = [pairwise_auc_oracle(scores[:, c], labels[:, c] >= 0.5) for c in range(4)]
        aps = [ap_oracle(scores[:, c], labels[:, c] >= 0.5) for c in range(4)]
        assert bundle.AUC == pytest.approx(np.mean(aucs), abs=1e-9)
        assert bundle.mAP == pytest.approx(np.mean(aps), abs=1e-9)

    def test_tied_scores_get_half_credit(self):
        scores = np.array([1.0, 1.0, 0.0, 0.0])
        positives = np.array([True, False, True, False])
        assert binary_auc(scores, positives) == pytest.approx(
            pairwise_auc_oracle(scores, positives)
        )

    def test_single_class_column_skipped_with_warning(self, caplog):
        scores = np.array([[0.9, 0.5], [0.8, 0.6]])
        labels = np.array([[1.0, 0.0], [1.0, 0.0]])
        with caplog.at_level(logging.WARNING):
            bundle = eval_metrics(scores, labels, multi_label=False)
        assert "skipped" in caplog.text
        # class 0 has no negatives, class 1 no positives: AUC undefined
        assert math.isnan(bundle.AUC)

    def test_multilabel_accuracy_is_elementwise(self):
        scores = np.array([[0.9, 0.1, 0.6], [0.2, 0.8, 0.4]])
        labels = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 1.0]])
        bundle = eval_metrics(scores, labels, multi_label=True)
        assert bundle.accuracy == pytest.approx(4.0 / 6.0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            eval_metrics(np.ones((2, 2)), np.ones((2, 3)), False)


class TestDropRate:
    def test_reported_fusion_numbers(self):
        assert drop_rate(0.865, 0.050) == pytest.approx(0.9422, abs=1e-4)

    def test_no_drop(self):
        assert drop_rate(0.7, 0.7) == 0.0

    def test_total_drop(self):
        assert drop_rate(0.7, 0.0) == 1.0

    def test_zero_clean_rejected(self):
        with pytest.raises(DomainError):
            drop_rate(0.0, 0.0)

    def test_negative_drop_allowed(self):
        assert drop_rate(0.5, 0.6) == pytest.approx(-0.2)


class TestPerClass:
    def test_single_label_per_class_accuracy(self):
        scores = np.array([[0.9, 0.1], [0.2, 0.8], [0.6, 0.4], [0.3, 0.7]])
        labels = np.array([[1, 0], [1, 0], [0, 1], [0, 1]], dtype=float)
        got = per_class_performance(scores, labels, multi_label=False)
        assert got[0] == pytest.approx(0.5)
        assert got[1] == pytest.approx(0.5)

    def test_multi_label_uses_average_precision(self, rng):
        scores = rng.random((30, 3))
        labels = (rng.random((30, 3)) < 0.5).astype(float)
        got = per_class_performance(scores, labels, multi_label=True)
        for c in range(3):
            pos = labels[:, c] >= 0.5
            if pos.any():
                assert got[c] == pytest.approx(
                    binary_average_precision(scores[:, c], pos)
                )

    def test_absent_class_is_nan(self):
        scores = np.array([[0.9, 0.1]])
        labels = np.array([[1.0, 0.0]])
        got = per_class_performance(scores, labels, multi_label=False)
        assert math.isnan(got[1])


def test_metric_bundle_dict_round_trip():
    bundle = MetricBundle(accuracy=0.5, mAP=0.6, AUC=0.7, d_prime=0.8)
    assert bundle.as_dict() == {"accuracy": 0.5, "mAP": 0.6, "AUC": 0.7, "d_prime": 0.8}
