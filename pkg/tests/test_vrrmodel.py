from decimal import Decimal

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tailforge.corpus import compute_splits
from tailforge.vrrmodel import (
    EvalReport,
    FinetuneConfig,
    VRRClassifier,
    VRRTrainConfig,
    display_combined,
    evaluate,
    finetune,
    load_classifier,
    parse_kv_report,
    round_half_up,
    save_classifier,
    train_baseline,
    wce_weights,
)


def _separable_world(n=400, seed=0):
    """Three object classes + three relations, linearly separable features."""
    rng = np.random.default_rng(seed)
    protos = np.eye(9)
    labels = np.stack([
        rng.integers(0, 3, n),
        rng.integers(0, 3, n),
        rng.integers(0, 3, n),
    ], axis=1)
    x = protos[labels[:, 0]] + protos[3 + labels[:, 1]] + protos[6 + labels[:, 2]]
    x = x + 0.05 * rng.standard_normal((n, 9))
    return x, labels


class TestWceWeights:
    def test_hand_normalization(self):
        np.testing.assert_allclose(wce_weights(np.array([9, 1])), [0.2, 1.8], atol=1e-12)

    def test_equal_freqs_unit_weights(self):
        np.testing.assert_allclose(wce_weights(np.array([5, 5, 5])), [1, 1, 1], atol=1e-12)

    def test_permutation_equivariance(self):
        freqs = np.array([7, 1, 4, 2])
        w = wce_weights(freqs)
        perm = np.array([2, 0, 3, 1])
        np.testing.assert_allclose(wce_weights(freqs[perm]), w[perm], atol=1e-12)

    def test_sum_to_class_count_and_inverse_order(self):
        rng = np.random.default_rng(1)
        freqs = rng.integers(1, 100, size=17)
        w = wce_weights(freqs)
        assert w.sum() == pytest.approx(17.0)
        order = np.argsort(freqs)
        assert np.all(np.diff(w[order]) <= 1e-12)

    def test_unseen_class_gets_max_weight(self):
        w = wce_weights(np.array([10, 0, 2]))
        assert w[1] == max(w)

    def test_all_zero_rejected(self):
        with pytest.raises(ValueError):
            wce_weights(np.zeros(3))


class TestTrainBaseline:
    def test_separable_world_high_accuracy(self):
        x, labels = _separable_world()
        model = train_baseline(x, labels, 3, 3, "ce",
                               VRRTrainConfig(steps=200, batch=64, lr=3e-2, seed=0, hidden=32))
        preds = model.predict(x)
        acc = (preds == labels).mean()
        assert acc > 0.95

    def test_ce_equals_wce_with_equal_freqs(self):
        x, labels = _separable_world(n=100)
        cfg = VRRTrainConfig(steps=30, batch=32, lr=1e-2, seed=4, hidden=16)
        ce = train_baseline(x, labels, 3, 3, "ce", cfg)
        wce = train_baseline(x, labels, 3, 3, "wce", cfg,
                             obj_freqs=np.array([10, 10, 10]), rel_freqs=np.array([4, 4, 4]))
        for name in ce.params:
            np.testing.assert_allclose(ce.params[name], wce.params[name], atol=1e-12)

    def test_deterministic(self):
        x, labels = _separable_world(n=100)
        cfg = VRRTrainConfig(steps=30, batch=32, lr=1e-2, seed=4, hidden=16)
        a = train_baseline(x, labels, 3, 3, "ce", cfg)
        b = train_baseline(x, labels, 3, 3, "ce", cfg)
        for name in a.params:
            np.testing.assert_array_equal(a.params[name], b.params[name])

    def test_label_out_of_vocab(self):
        x, labels = _separable_world(n=50)
        labels = labels.copy()
        labels[0, 0] = 9
        with pytest.raises(ValueError):
            train_baseline(x, labels, 3, 3, "ce",
                           VRRTrainConfig(steps=1, batch=8, lr=1e-3, seed=0))

    def test_wce_needs_freqs(self):
        x, labels = _separable_world(n=50)
        with pytest.raises(ValueError):
            train_baseline(x, labels, 3, 3, "wce",
                           VRRTrainConfig(steps=1, batch=8, lr=1e-3, seed=0))


class TestFinetune:
    def _model(self):
        x, labels = _separable_world(n=100)
        return train_baseline(x, labels, 3, 3, "ce",
                              VRRTrainConfig(steps=20, batch=32, lr=1e-2, seed=1, hidden=16)), x, labels

    def test_zero_epochs_identity(self):
        model, x, labels = self._model()
        tuned = finetune(model, x, labels, FinetuneConfig(epochs=0, batch=32, lr=1e-3, seed=0))
        for name in model.params:
            np.testing.assert_array_equal(tuned.params[name], model.params[name])

    def test_zero_lr_identity_exact(self):
        model, x, labels = self._model()
        tuned = finetune(model, x, labels, FinetuneConfig(epochs=3, batch=32, lr=0.0, seed=0))
        for name in model.params:
            np.testing.assert_array_equal(tuned.params[name], model.params[name])

    def test_input_model_not_mutated(self):
        model, x, labels = self._model()
        before = {k: v.copy() for k, v in model.params.items()}
        finetune(model, x, labels, FinetuneConfig(epochs=2, batch=32, lr=1e-2, seed=0))
        for name in before:
            np.testing.assert_array_equal(model.params[name], before[name])

    def test_curriculum_with_empty_hard_equals_off(self):
        model, x, labels = self._model()
        cfg = FinetuneConfig(epochs=2, batch=32, lr=1e-3, seed=3)
        plain = finetune(model, x, labels, cfg, curriculum=None)
        all_easy = (np.arange(x.shape[0]), np.array([], dtype=int))
        degenerate = finetune(model, x, labels, cfg, curriculum=all_easy)
        for name in plain.params:
            np.testing.assert_array_equal(plain.params[name], degenerate.params[name])

    def test_curriculum_orders_easy_first(self):
        model, x, labels = self._model()
        seen = []
        original = type(model).forward

        def spy(self, inp):
            seen.append(np.asarray(inp).shape[0] and inp.copy())
            return original(self, inp)

        try:
            type(model).forward = spy
            easy = np.arange(0, 50)
            hard = np.arange(50, 100)
            finetune(model, x, labels, FinetuneConfig(epochs=1, batch=25, lr=1e-3, seed=0),
                     curriculum=(easy, hard))
        finally:
            type(model).forward = original
        # four batches of 25: first two drawn from easy rows, last two from hard
        assert len(seen) == 4
        easy_rows = {tuple(np.round(row, 6)) for row in x[easy]}
        for batch in seen[:2]:
            for row in batch:
                assert tuple(np.round(row, 6)) in easy_rows
        for batch in seen[2:]:
            for row in batch:
                assert tuple(np.round(row, 6)) not in easy_rows

    def test_empty_set_rejected(self):
        model, x, labels = self._model()
        with pytest.raises(ValueError):
            finetune(model, np.zeros((0, 9)), np.zeros((0, 3), dtype=int),
                     FinetuneConfig(epochs=1, batch=8, lr=1e-3, seed=0))


class TestEvaluate:
    def _splits(self, n_obj=6, n_rel=6):
        return (compute_splits(np.arange(n_obj, 0, -1)),
                compute_splits(np.arange(n_rel, 0, -1)))

    def test_all_correct_scores_100(self):
        x, labels = _separable_world(n=300, seed=2)
        model = train_baseline(x, labels, 3, 3, "ce",
                               VRRTrainConfig(steps=300, batch=64, lr=3e-2, seed=0, hidden=32))
        # evaluate only on samples the model predicts perfectly
        preds = model.predict(x)
        mask = (preds == labels).all(axis=1)
        obj_splits = compute_splits(np.array([10, 5, 1]))
        rel_splits = compute_splits(np.array([9, 4, 2]))
        report = evaluate(model, x[mask], labels[mask],
                          obj_splits, rel_splits)
        assert report.so.all == pytest.approx(100.0)
        assert report.relation.all == pytest.approx(100.0)
        assert report.combined == pytest.approx(100.0)

    def test_two_class_average(self):
        # deterministic model: always predicts class 0 for every head
        model = VRRClassifier(2, 3, 3, hidden=4, rng_seed=0)
        for head in ("subject", "relation", "object"):
            model.params[f"head.{head}.w"][:] = 0.0
            model.params[f"head.{head}.b"][:] = 0.0
            model.params[f"head.{head}.b"][0] = 1.0
        x = np.zeros((4, 2))
        labels = np.array([[0, 0, 0], [1, 0, 1], [0, 0, 0], [1, 0, 1]])
        obj_splits = compute_splits(np.array([5, 4, 1]))
        rel_splits = compute_splits(np.array([5, 4, 1]))
        report = evaluate(model, x, labels, obj_splits, rel_splits)
        # class 0 of S/O: 100% (4 hits of 4); class 1: 0% of 4; class 2 uncovered
        assert report.so.all == pytest.approx(50.0)
        assert report.relation.all == pytest.approx(100.0)

    def test_order_invariance(self):
        x, labels = _separable_world(n=120, seed=3)
        model = train_baseline(x, labels, 3, 3, "ce",
                               VRRTrainConfig(steps=50, batch=32, lr=1e-2, seed=0, hidden=16))
        obj_splits = compute_splits(np.array([9, 3, 1]))
        rel_splits = compute_splits(np.array([9, 3, 1]))
        a = evaluate(model, x, labels, obj_splits, rel_splits)
        perm = np.random.default_rng(0).permutation(120)
        b = evaluate(model, x[perm], labels[perm], obj_splits, rel_splits)
        assert a.so.all == pytest.approx(b.so.all)
        assert a.combined == pytest.approx(b.combined)

    def test_duplicating_one_class_does_not_change_average(self):
        x, labels = _separable_world(n=120, seed=5)
        model = train_baseline(x, labels, 3, 3, "ce",
                               VRRTrainConfig(steps=50, batch=32, lr=1e-2, seed=0, hidden=16))
        obj_splits = compute_splits(np.array([9, 3, 1]))
        rel_splits = compute_splits(np.array([9, 3, 1]))
        a = evaluate(model, x, labels, obj_splits, rel_splits)
        dup = labels[:, 1] == 1
        x2 = np.vstack([x, x[dup]])
        labels2 = np.vstack([labels, labels[dup]])
        b = evaluate(model, x2, labels2, obj_splits, rel_splits)
        assert a.relation.all == pytest.approx(b.relation.all)

    def test_empty_test_set(self):
        model = VRRClassifier(2, 3, 3)
        with pytest.raises(ValueError):
            evaluate(model, np.zeros((0, 2)), np.zeros((0, 3), dtype=int),
                     compute_splits([3, 2, 1]), compute_splits([3, 2, 1]))


class TestRounding:
    def test_half_up(self):
        assert round_half_up(14.655) == Decimal("14.66")
        assert round_half_up(14.654) == Decimal("14.65")
        assert round_half_up(2.5, 0) == Decimal("3")

    def test_table_row_check(self):
        assert display_combined(17.51, 11.80) == Decimal("14.66")

    def test_report_kv_roundtrip(self):
        from tailforge.vrrmodel import SplitScores
        report = EvalReport(
            so=SplitScores(many=62.23, medium=41.77, few=10.14, all=17.51),
            relation=SplitScores(many=35.21, medium=23.94, few=8.04, all=11.80),
            combined=14.655,
            covered_so_classes=1703,
            covered_rel_classes=310,
            meta={"flags.so_seed": "true"},
        )
        kv = parse_kv_report("\n".join(report.to_kv_lines()))
        assert kv["so.all"] == "17.51"
        assert kv["relation.all"] == "11.80"
        assert kv["combined.all"] == "14.66"
        assert kv["meta.flags.so_seed"] == "true"
        assert "combined" in report.to_text()


class TestClassifierCheckpoint:
    def test_roundtrip_preserves_predictions(self, tmp_path):
        x, labels = _separable_world(n=60, seed=6)
        model = train_baseline(x, labels, 3, 3, "ce",
                               VRRTrainConfig(steps=40, batch=16, lr=1e-2, seed=2, hidden=16))
        path = tmp_path / "m.ckpt"
        save_classifier(model, path)
        back = load_classifier(path)
        np.testing.assert_array_equal(back.predict(x), model.predict(x))
        assert back.hidden == model.hidden
