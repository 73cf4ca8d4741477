"""Confusion matrices, accuracies and tabular reports."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fcn import FcnModel, predict

ORIENTATION = "rows = true class, columns = predicted class"


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (G+1, G+1), rows true, columns predicted

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise ValueError("confusion matrix must be square")
        if np.any(self.counts < 0):
            raise ValueError("negative counts")

    @classmethod
    def from_labels(cls, true, pred, n_classes: int) -> "ConfusionMatrix":
        true, pred = np.asarray(true, dtype=np.int64), np.asarray(pred, dtype=np.int64)
        if true.shape != pred.shape:
            raise ValueError("true and predicted labels differ in length")
        if true.size == 0:
            raise ValueError("empty test set")
        c = np.zeros((n_classes, n_classes), dtype=np.int64)
        np.add.at(c, (true, pred), 1)
        return cls(c)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total)

    @property
    def per_class_accuracy(self) -> np.ndarray:
        rows = self.counts.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(rows > 0, np.diag(self.counts) / np.maximum(rows, 1), np.nan)

    @property
    def percentages(self) -> np.ndarray:
        rows = self.counts.sum(axis=1, keepdims=True)
        return 100.0 * self.counts / np.maximum(rows, 1)

    @property
    def damaged_as_undamaged(self) -> int:
        """Damaged instances (true class > 0) predicted as class 0."""
        return int(self.counts[1:, 0].sum())

    def to_text(self, title: str = "") -> str:
        n = self.counts.shape[0]
        lines = [title] if title else []
        lines.append(f"confusion matrix ({ORIENTATION})")
        lines.append("true\\pred " + " ".join(f"{j:>7d}" for j in range(n)) + "   total")
        for i in range(n):
            cells = " ".join(f"{self.counts[i, j]:>7d}" for j in range(n))
            lines.append(f"{i:>9d} {cells} {self.counts[i].sum():>7d}")
        lines.append("row-normalized percentages")
        for i in range(n):
            lines.append(f"{i:>9d} " + " ".join(f"{self.percentages[i, j]:>7.1f}" for j in range(n)))
        lines.append(f"global accuracy: {100 * self.accuracy:.2f}% over {self.total} instances")
        return "\n".join(lines)


def evaluate(model: FcnModel, U, labels, n_classes: int | None = None) -> ConfusionMatrix:
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("empty test set")
    return ConfusionMatrix.from_labels(labels, predict(model, U), n_classes or model.n_classes)


@dataclass
class Table:
    columns: list
    rows: list

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        w.writerows(self.rows)
        return buf.getvalue()

    def to_text(self) -> str:
        cells = [[_fmt(v) for v in r] for r in self.rows]
        widths = [max(len(str(c)), *(len(r[i]) for r in cells)) if cells else len(str(c))
                  for i, c in enumerate(self.columns)]
        head = "  ".join(str(c).rjust(w) for c, w in zip(self.columns, widths))
        body = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
        return "\n".join([head, "-" * len(head), *body])

    def write(self, stem) -> tuple[Path, Path]:
        stem = Path(stem)
        stem.parent.mkdir(parents=True, exist_ok=True)
        c, t = stem.with_suffix(".csv"), stem.with_suffix(".txt")
        c.write_text(self.to_csv())
        t.write_text(self.to_text() + "\n")
        return c, t


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def curves_table(history) -> Table:
    """Per-iteration training curve plus the epoch-level validation values."""
    rows = []
    for i, epoch in enumerate(history.iter_epoch):
        ep = epoch - 1
        vl = history.val_loss[ep] if history.val_loss else None
        va = history.val_accuracy[ep] if history.val_accuracy else None
        rows.append([i + 1, ep + 1, history.iter_loss[i], history.iter_accuracy[i], vl, va])
    return Table(["iteration", "epoch", "train_loss", "train_accuracy", "val_loss", "val_accuracy"], rows)
