import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cogstates import metrics as mt
from cogstates.metrics import ConfusionMatrix, class_metrics, confusion


def counting_oracle(true, pred, n=6):
    counts = np.zeros((n, n), dtype=np.int64)
    for t, p in zip(true, pred):
        counts[t][p] += 1
    return counts


class TestConfusion:
    def test_perfect_predictions_diagonal(self):
        labels = [0, 1, 2, 3, 4, 5, 2, 2]
        cm = confusion(labels, labels)
        assert np.array_equal(cm.counts, np.diag(np.bincount(labels, minlength=6)))

    def test_degenerate_predictor_single_column(self):
        cm = confusion([0, 1, 2, 3, 4, 5], [0] * 6)
        assert cm.counts[:, 0].sum() == 6
        assert cm.counts[:, 1:].sum() == 0

    def test_matches_counting_oracle(self):
        rng = np.random.default_rng(0)
        true = rng.integers(0, 6, size=50)
        pred = rng.integers(0, 6, size=50)
        cm = confusion(true, pred)
        assert np.array_equal(cm.counts, counting_oracle(true, pred))

    def test_length_mismatch(self):
        with pytest.raises(mt.MetricsError, match="length"):
            confusion([0, 1], [0])

    def test_label_out_of_range(self):
        with pytest.raises(mt.MetricsError):
            confusion([0, 6], [0, 0])


class TestEquationArithmetic:
    def test_diagonal_gives_all_ones(self):
        cm = confusion([0, 1, 2, 3, 4, 5], [0, 1, 2, 3, 4, 5])
        m = class_metrics(cm)
        assert m.accuracy == 1.0
        assert all(x.value == 1.0 and x.defined for x in m.precision + m.recall + m.f1)

    def test_tp8_fp2_fn2(self):
        # class 0: 8 true positives, 2 false positives, 2 false negatives
        true = [0] * 8 + [1] * 2 + [0] * 2
        pred = [0] * 8 + [0] * 2 + [1] * 2
        cm = confusion(true, pred)
        assert mt.precision(cm, 0) == pytest.approx(0.8)
        assert mt.recall(cm, 0) == pytest.approx(0.8)
        assert mt.f1(cm, 0) == pytest.approx(0.8)

    def test_absent_class_reported_zero_undefined(self):
        cm = confusion([0, 0, 1], [0, 1, 1])
        m = class_metrics(cm)
        assert m.recall[5].value == 0.0 and not m.recall[5].defined
        assert m.precision[5].value == 0.0 and not m.precision[5].defined
        assert m.f1[5].value == 0.0 and not m.f1[5].defined

    def test_accuracy_is_trace_over_total(self):
        rng = np.random.default_rng(1)
        true = rng.integers(0, 6, size=200)
        pred = rng.integers(0, 6, size=200)
        cm = confusion(true, pred)
        assert mt.accuracy(cm) == np.trace(cm.counts) / 200


label_lists = st.lists(st.integers(min_value=0, max_value=5), min_size=2, max_size=60)


class TestProperties:
    @settings(max_examples=80, deadline=None)
    @given(label_lists, st.randoms(use_true_random=False))
    def test_f1_between_p_and_r(self, true, rnd):
        pred = [rnd.randint(0, 5) for _ in true]
        cm = confusion(true, pred)
        m = class_metrics(cm)
        for c in range(6):
            if m.precision[c].defined and m.recall[c].defined and m.f1[c].defined:
                p, r, f = m.precision[c].value, m.recall[c].value, m.f1[c].value
                assert min(p, r) - 1e-12 <= f <= max(p, r) + 1e-12
                if p == r:
                    assert f == pytest.approx(p)

    @settings(max_examples=80, deadline=None)
    @given(label_lists, st.randoms(use_true_random=False))
    def test_accuracy_is_weighted_recall(self, true, rnd):
        pred = [rnd.randint(0, 5) for _ in true]
        cm = confusion(true, pred)
        weighted = sum(cm.counts[c, :].sum() * mt.recall(cm, c) for c in range(6))
        assert mt.accuracy(cm) == pytest.approx(weighted / len(true))

    @settings(max_examples=40, deadline=None)
    @given(label_lists, st.randoms(use_true_random=False))
    def test_permutation_invariant(self, true, rnd):
        pred = [rnd.randint(0, 5) for _ in true]
        order = list(range(len(true)))
        rnd.shuffle(order)
        cm1 = confusion(true, pred)
        cm2 = confusion([true[i] for i in order], [pred[i] for i in order])
        assert np.array_equal(cm1.counts, cm2.counts)


class TestExports:
    def test_json_report_parses(self):
        import json
        cm = confusion([0, 1, 2], [0, 1, 1])
        payload = json.loads(mt.metrics_to_json(cm))
        assert payload["total"] == 3
        assert set(payload["classes"]) == set(mt.TASKS)

    def test_csv_confusion(self, tmp_path):
        cm = confusion([0, 1, 2], [0, 1, 1])
        path = tmp_path / "cm.csv"
        mt.confusion_to_csv(path, cm)
        lines = path.read_text().strip().splitlines()
        assert len(lines) == 7
        assert lines[0].split(",")[1] == "PVT"
