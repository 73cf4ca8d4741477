import numpy as np
import pytest

from shmrom.evaluation import ORIENTATION, ConfusionMatrix, Table, curves_table, evaluate
from shmrom.fcn import TrainConfig, TrainHistory, init_model


def test_perfect_predictor():
    y = np.array([0, 1, 2, 3, 4, 4, 2])
    cm = ConfusionMatrix.from_labels(y, y, 5)
    assert cm.accuracy == 1.0
    np.testing.assert_array_equal(cm.counts, np.diag(np.bincount(y, minlength=5)))
    assert cm.damaged_as_undamaged == 0


def test_constant_predictor_balanced():
    y = np.repeat(np.arange(5), 20)
    cm = ConfusionMatrix.from_labels(y, np.zeros_like(y), 5)
    assert cm.accuracy == pytest.approx(0.2)
    assert cm.damaged_as_undamaged == 80
    np.testing.assert_allclose(cm.per_class_accuracy, [1, 0, 0, 0, 0])


def test_hand_counted_case():
    cm = ConfusionMatrix.from_labels([0, 1, 1], [0, 0, 1], 3)
    np.testing.assert_array_equal(cm.counts, [[1, 0, 0], [1, 1, 0], [0, 0, 0]])
    assert cm.accuracy == pytest.approx(2 / 3)
    np.testing.assert_allclose(cm.percentages[1], [50, 50, 0])
    assert np.isnan(cm.per_class_accuracy[2])


def test_row_sums_invariant_under_column_permutation():
    rng = np.random.default_rng(0)
    y, p = rng.integers(0, 5, 100), rng.integers(0, 5, 100)
    perm = rng.permutation(5)
    a = ConfusionMatrix.from_labels(y, p, 5)
    b = ConfusionMatrix.from_labels(y, perm[p], 5)
    np.testing.assert_array_equal(a.counts.sum(axis=1), b.counts.sum(axis=1))
    np.testing.assert_array_equal(a.counts.sum(axis=1), np.bincount(y, minlength=5))


def test_invalid_inputs():
    with pytest.raises(ValueError, match="empty"):
        ConfusionMatrix.from_labels([], [], 5)
    with pytest.raises(ValueError):
        ConfusionMatrix.from_labels([0, 1], [0], 5)
    with pytest.raises(ValueError):
        ConfusionMatrix(np.array([[1, -1], [0, 0]]))


def test_evaluate_is_pure():
    model = init_model(2, 3, TrainConfig(filters=(3, 3, 3)), np.random.default_rng(0))
    U = np.random.default_rng(1).normal(size=(10, 12, 2))
    y = np.arange(10) % 3
    a, b = evaluate(model, U, y), evaluate(model, U, y)
    np.testing.assert_array_equal(a.counts, b.counts)
    assert a.total == 10
    with pytest.raises(ValueError):
        evaluate(model, U[:0], y[:0])


def test_text_report_states_orientation():
    txt = ConfusionMatrix.from_labels([0, 1], [0, 1], 2).to_text("title")
    assert txt.startswith("title") and ORIENTATION in txt and "global accuracy: 100.00%" in txt


def test_table_outputs(tmp_path):
    t = Table(["delta", "accuracy"], [[0.25, 0.99], [0.02, None]])
    assert t.to_csv() == "delta,accuracy\n0.25,0.99\n0.02,\n"
    assert "-" in t.to_text().splitlines()[-1]
    c, x = t.write(tmp_path / "sub" / "table")
    assert c.read_text() == t.to_csv() and x.exists()


def test_curves_table():
    h = TrainHistory(iter_loss=[1.0, 0.9, 0.8], iter_accuracy=[0.1, 0.2, 0.3], iter_epoch=[1, 1, 2],
                     epoch_loss=[0.95, 0.8], epoch_accuracy=[0.15, 0.3], val_loss=[1.1, 0.7], val_accuracy=[0.2, 0.4])
    t = curves_table(h)
    assert [r[1] for r in t.rows] == [1, 1, 2]
    assert t.rows[2][4:] == [0.7, 0.4]
