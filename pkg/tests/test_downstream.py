import copy
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import nmodal.downstream as ds
from nmodal.data import SynthConfig, generate_synthetic
from nmodal.downstream import (
    ClassifierModel,
    ExperimentConfig,
    LabeledEmbeddings,
    accuracy,
    format_report_table,
    kfold_split,
    labeled_from_bundle,
    predict_proba,
    report_to_json,
    roc_auc,
    roc_curve,
    run_account_experiment,
    run_classification,
    run_stance_experiment,
    smote_oversample,
    train_linear_classifier,
    write_roc_csv,
)
from oracles import ref_auc


def blobs(seed, counts, centers, spread=0.3):
    rng = np.random.default_rng(seed)
    vecs, labels = [], []
    for c, (n, center) in enumerate(zip(counts, centers)):
        vecs.append(rng.standard_normal((n, len(center))) * spread + np.asarray(center))
        labels.extend([c] * n)
    return LabeledEmbeddings(
        vectors=np.concatenate(vecs), labels=np.array(labels), class_count=len(counts)
    )


class TestLinearClassifier:
    def test_separable_blobs_reach_full_accuracy(self):
        data = blobs(0, [40, 40], [(-2.0, 0.0), (2.0, 0.0)])
        model = train_linear_classifier(data, epochs=500, lr=0.5)
        assert accuracy(model, data) == 1.0

    def test_zero_epochs_is_uniform(self):
        data = blobs(1, [5, 5, 5], [(0, 0), (1, 1), (2, 2)])
        model = train_linear_classifier(data, epochs=0)
        probs = predict_proba(model, data.vectors)
        np.testing.assert_allclose(probs, 1 / 3, atol=1e-15)

    def test_bias_only_logit_gap(self):
        # logits (10, 0): p(class0) = 1/(1+e^-10)
        model = ClassifierModel(W=np.zeros((2, 3)), b=np.array([10.0, 0.0]))
        p = predict_proba(model, np.zeros(3))
        assert p[0] == pytest.approx(1.0 / (1.0 + np.exp(-10.0)), rel=1e-12)
        assert p[0] > 0.999

    def test_single_class_rejected(self):
        data = LabeledEmbeddings(np.zeros((4, 2)), np.zeros(4, dtype=int), class_count=2, validate=False)
        with pytest.raises(ValueError):
            train_linear_classifier(data)

    def test_probe_shapes(self):
        model = ClassifierModel(W=np.zeros((2, 3)), b=np.zeros(2))
        single = predict_proba(model, np.ones(3))
        stacked = predict_proba(model, np.ones((4, 3)))
        assert single.shape == (2,)
        assert stacked.shape == (4, 2)
        np.testing.assert_array_equal(stacked[0], single)
        with pytest.raises(ValueError):
            predict_proba(model, np.ones(4))

    def test_deterministic(self):
        data = blobs(2, [20, 20], [(-1, 0), (1, 0)])
        m1 = train_linear_classifier(data, epochs=50)
        m2 = train_linear_classifier(data, epochs=50)
        np.testing.assert_array_equal(m1.W, m2.W)
        np.testing.assert_array_equal(m1.b, m2.b)

    def test_validation(self):
        with pytest.raises(ValueError):
            LabeledEmbeddings(np.zeros((3, 2)), np.array([0, 1]), class_count=2)
        with pytest.raises(ValueError):
            LabeledEmbeddings(np.zeros((3, 2)), np.array([0, 1, 2]), class_count=2)
        with pytest.raises(ValueError):
            LabeledEmbeddings(np.zeros((2, 2)), np.array([0, 0]), class_count=2)


class TestAuc:
    def test_perfect_separation(self):
        assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
        assert roc_auc([0.9, 0.8, 0.1, 0.2], [0, 0, 1, 1]) == 0.0

    def test_three_quarters(self):
        # one of four positive-negative pairs is misordered
        assert roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75

    def test_all_tied_is_half(self):
        assert roc_auc([0.5] * 6, [0, 1, 0, 1, 0, 1]) == 0.5

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            roc_auc([0.1, 0.2], [1, 1])

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_pair_counting_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(5, 40))
        # quantized scores so ties actually occur
        scores = np.round(rng.random(n), 1)
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        assert roc_auc(scores, labels) == pytest.approx(ref_auc(scores, labels), abs=1e-12)

    @given(st.integers(min_value=0, max_value=2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_invariant_under_increasing_transforms(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(4, 30))
        scores = np.round(rng.standard_normal(n), 1)
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        base = roc_auc(scores, labels)
        assert roc_auc(3.0 * scores + 7.0, labels) == base
        assert roc_auc(np.exp(scores), labels) == base


class TestRocCurve:
    def test_endpoints_and_monotonicity(self):
        rng = np.random.default_rng(3)
        scores = rng.random(50)
        labels = rng.integers(0, 2, size=50)
        labels[0], labels[1] = 0, 1
        pts = roc_curve(scores, labels)
        assert pts[0] == (0.0, 0.0)
        assert pts[-1] == (1.0, 1.0)
        fprs = [p[0] for p in pts]
        tprs = [p[1] for p in pts]
        assert fprs == sorted(fprs)
        assert tprs == sorted(tprs)

    def test_tied_scores_move_diagonally(self):
        pts = roc_curve([1.0, 1.0, 0.0, 0.0], [1, 0, 1, 0])
        assert pts == [(0.0, 0.0), (0.5, 0.5), (1.0, 1.0)]

    def test_trapezoid_area_equals_rank_auc(self):
        rng = np.random.default_rng(4)
        scores = np.round(rng.random(40), 1)
        labels = rng.integers(0, 2, size=40)
        labels[:2] = [0, 1]
        pts = roc_curve(scores, labels)
        area = sum(
            (x2 - x1) * (y1 + y2) / 2.0
            for (x1, y1), (x2, y2) in zip(pts, pts[1:])
        )
        assert area == pytest.approx(roc_auc(scores, labels), abs=1e-12)

    def test_csv_export(self):
        buf = io.StringIO()
        write_roc_csv([(0.0, 0.0), (0.5, 1.0), (1.0, 1.0)], buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == "fpr,tpr"
        assert lines[1] == "0.0,0.0"
        assert len(lines) == 4


class TestSmote:
    def test_balances_counts_and_keeps_originals(self):
        data = blobs(5, [90, 10], [(0, 0), (5, 5)])
        out = smote_oversample(data, k=5, seed=1)
        assert out.sample_count == 180
        counts = np.bincount(out.labels)
        assert counts.tolist() == [90, 90]
        np.testing.assert_array_equal(out.vectors[:100], data.vectors)
        np.testing.assert_array_equal(out.labels[:100], data.labels)
        assert np.all(out.labels[100:] == 1)

    def test_synthetics_lie_on_member_segments(self):
        # with exactly two class members every synthetic point must fall on
        # the segment joining them
        vecs = np.array([[0.0, 0.0], [0, 1], [1, 0], [2, 2], [3, 3], [10.0, 0.0], [10.0, 4.0]])
        labels = np.array([0, 0, 0, 0, 0, 1, 1])
        data = LabeledEmbeddings(vecs, labels, class_count=2)
        out = smote_oversample(data, k=3, seed=2)
        synth = out.vectors[7:]
        assert len(synth) == 3
        a, b = vecs[5], vecs[6]
        for s in synth:
            t = (s - a) @ (b - a) / ((b - a) @ (b - a))
            assert 0.0 <= t <= 1.0
            np.testing.assert_allclose(s, a + t * (b - a), atol=1e-12)

    def test_neighbors_stay_within_class(self):
        data = blobs(6, [50, 8], [(0.0, 0.0), (100.0, 100.0)], spread=0.5)
        out = smote_oversample(data, k=3, seed=3)
        synth = out.vectors[58:]
        center = np.array([100.0, 100.0])
        dist = np.linalg.norm(synth - center, axis=1)
        assert np.all(dist < 10.0)

    def test_balanced_input_unchanged(self):
        data = blobs(7, [20, 20], [(0, 0), (3, 3)])
        out = smote_oversample(data, seed=4)
        assert out.sample_count == data.sample_count
        np.testing.assert_array_equal(out.vectors, data.vectors)

    def test_singleton_class_rejected(self):
        data = LabeledEmbeddings(
            np.array([[0.0], [1.0], [2.0]]), np.array([0, 0, 1]), class_count=2
        )
        with pytest.raises(ValueError, match="at least 2"):
            smote_oversample(data)

    def test_deterministic(self):
        data = blobs(8, [30, 6], [(0, 0), (4, 4)])
        o1 = smote_oversample(data, seed=9)
        o2 = smote_oversample(data, seed=9)
        np.testing.assert_array_equal(o1.vectors, o2.vectors)


class TestKfold:
    def test_even_split(self):
        folds = kfold_split(10, 5, seed=0)
        assert [len(f) for f in folds] == [2, 2, 2, 2, 2]

    def test_remainder_goes_to_first_folds(self):
        folds = kfold_split(11, 5, seed=0)
        assert [len(f) for f in folds] == [3, 2, 2, 2, 2]

    def test_disjoint_exhaustive(self):
        folds = kfold_split(23, 4, seed=1)
        joined = np.concatenate(folds)
        assert len(joined) == 23
        assert len(set(joined.tolist())) == 23

    def test_deterministic_and_seeded(self):
        a = kfold_split(12, 3, seed=5)
        b = kfold_split(12, 3, seed=5)
        c = kfold_split(12, 3, seed=6)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)
        assert any(not np.array_equal(x, y) for x, y in zip(a, c))

    def test_bounds(self):
        with pytest.raises(ValueError):
            kfold_split(5, 1)
        with pytest.raises(ValueError):
            kfold_split(3, 4)


class TestRunClassification:
    def test_binary_report_structure(self):
        data = blobs(10, [60, 60], [(-2, 0), (2, 0)])
        report = run_classification(data, ["neg", "pos"], ExperimentConfig(folds=4, epochs=200), task="toy")
        assert report["task"] == "toy"
        assert report["accuracy"] > 0.95
        assert len(report["fold_accuracies"]) == 4
        assert report["auc"] > 0.99
        assert report["roc_points"][0] == [0.0, 0.0]
        assert report["roc_points"][-1] == [1.0, 1.0]
        labels = [row["label"] for row in report["per_class"]]
        assert labels == ["neg", "pos"]

    def test_multiclass_macro_auc(self):
        data = blobs(11, [40, 40, 40], [(-3, 0), (3, 0), (0, 3)])
        report = run_classification(
            data, ["a", "b", "c"], ExperimentConfig(folds=3, epochs=200), task="toy"
        )
        assert set(report["per_class_auc"]) == {"a", "b", "c"}
        assert report["macro_auc"] > 0.95
        assert "auc" not in report

    def test_shuffled_labels_fall_to_chance(self):
        data = blobs(12, [150, 150], [(-2, 0), (2, 0)])
        report = run_classification(
            data,
            ["neg", "pos"],
            ExperimentConfig(folds=5, epochs=200, shuffle_labels=True, seed=3),
            task="toy",
        )
        # 300 samples: 3 sigma of a fair coin is ~0.087
        assert abs(report["accuracy"] - 0.5) < 0.09
        assert abs(report["macro_auc"] - 0.5) < 0.1
        assert report["shuffled_labels"] is True

    def test_smote_applied_inside_training_folds_only(self, monkeypatch):
        data = blobs(13, [80, 20], [(-2, 0), (2, 0)])
        seen = []
        real = ds.smote_oversample

        def spy(d, k=5, seed=0):
            seen.append(d.sample_count)
            return real(d, k=k, seed=seed)

        monkeypatch.setattr(ds, "smote_oversample", spy)
        run_classification(
            data, ["neg", "pos"], ExperimentConfig(folds=5, epochs=10, smote=True), task="toy"
        )
        assert seen == [80, 80, 80, 80, 80]

    def test_report_json_round_trip(self):
        data = blobs(14, [30, 30], [(-2, 0), (2, 0)])
        report = run_classification(data, ["n", "p"], ExperimentConfig(folds=3, epochs=50), task="toy")
        doc = json.loads(report_to_json(report))
        assert doc["task"] == "toy"
        table = format_report_table(report)
        assert "accuracy:" in table and "n" in table


class TestBundleExperiments:
    def test_labeled_from_bundle_stance_drops_unlabeled(self, small_model, small_bundle):
        state, _ = small_model
        bundle = copy.deepcopy(small_bundle.subset(range(40)))
        for p in bundle.posts[:10]:
            p.stance_label = -1
        data, names = labeled_from_bundle(state, bundle, "stance")
        assert names == ["class0", "class1"]
        assert data.sample_count == 3 * 30

    def test_labeled_from_bundle_account(self, small_model, small_bundle):
        state, _ = small_model
        data, names = labeled_from_bundle(state, small_bundle, "account")
        assert names == sorted(names)
        assert len(names) == 5
        assert data.sample_count == 3 * small_bundle.post_count
        assert data.class_count == 5

    def test_unknown_label_kind(self, small_model, small_bundle):
        state, _ = small_model
        with pytest.raises(ValueError):
            labeled_from_bundle(state, small_bundle, "color")

    def test_stance_experiment_beats_chance(self, small_model, small_bundle):
        state, _ = small_model
        report = run_stance_experiment(
            state, small_bundle, ExperimentConfig(folds=3, epochs=150)
        )
        assert report["task"] == "stance"
        assert report["accuracy"] > 0.55
        assert report["auc"] > 0.6

    def test_account_experiment_beats_chance(self, small_model, small_bundle):
        state, _ = small_model
        report = run_account_experiment(
            state, small_bundle, ExperimentConfig(folds=3, epochs=150, smote=True)
        )
        assert report["task"] == "account"
        assert len(report["classes"]) == 5
        assert report["accuracy"] > 3 * (1 / 5)
