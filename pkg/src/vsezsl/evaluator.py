"""Class-averaged top-1 accuracy over seen/unseen classes and their harmonic mean.

In the ``gzsl`` setting every test instance is scored against all classes;
in ``zsl`` only unseen-class test instances are scored, against unseen
classes only. Accuracies are percentages.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .datamodel import Codebook, Dataset
from .errors import CoverageError
from .numerics import Parallel

SETTINGS = ("zsl", "gzsl")
CSV_COLUMNS = ("setting", "split", "ts", "tr", "H", "n")


def per_class_top1(predictions, labels, classes):
    """Mean over ``classes`` of the fraction of correct predictions, in percent."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if len(predictions) != len(labels):
        raise ValueError("predictions and labels differ in length")
    accs = []
    for c in classes:
        sel = labels == c
        if not np.any(sel):
            raise ValueError(f"class {c} has no test instances")
        accs.append(np.mean(predictions[sel] == c))
    if not accs:
        raise ValueError("no classes to average over")
    return 100.0 * float(np.mean(accs))


def per_class_accuracy(predictions, labels, classes):
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    return {int(c): 100.0 * float(np.mean(predictions[labels == c] == c)) for c in classes}


def harmonic_mean(ts, tr):
    if ts < 0 or tr < 0:
        raise ValueError("accuracies must be non-negative")
    if ts + tr == 0:
        return 0.0
    return 2.0 * ts * tr / (ts + tr)


@dataclass
class EvalReport:
    setting: str
    split: str
    ts: float
    tr: float | None  # None in the zsl setting
    H: float | None
    n: int
    per_class: dict = field(default_factory=dict)

    def table(self):
        """Aligned text table with one decimal."""
        def fmt(v):
            return "-" if v is None else f"{v:.1f}"
        head = f"{'setting':<8} {'split':<12} {'ts':>6} {'tr':>6} {'H':>6} {'n':>6}"
        row = (f"{self.setting:<8} {self.split:<12} {fmt(self.ts):>6} {fmt(self.tr):>6} "
               f"{fmt(self.H):>6} {self.n:>6}")
        return head + "\n" + row

    def csv_row(self):
        return {"setting": self.setting, "split": self.split, "ts": repr(self.ts),
                "tr": "" if self.tr is None else repr(self.tr),
                "H": "" if self.H is None else repr(self.H), "n": str(self.n)}

    def to_csv(self):
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerow(self.csv_row())
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


def candidate_classes(dataset: Dataset, setting):
    if setting not in SETTINGS:
        raise ValueError(f"unknown setting {setting!r}; expected zsl or gzsl")
    return list(dataset.split.unseen) if setting == "zsl" else list(dataset.classes)


def report_from_predictions(predictions, labels, dataset: Dataset, setting):
    """Assemble a report from predictions for the scored test instances."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    present = set(labels.tolist())
    unseen = [c for c in dataset.split.unseen if c in present]
    seen = [c for c in dataset.split.seen if c in present]
    ts = per_class_top1(predictions, labels, unseen)
    if setting == "zsl":
        return EvalReport(setting, dataset.split.name, ts, None, None, len(labels),
                          per_class_accuracy(predictions, labels, unseen))
    tr = per_class_top1(predictions, labels, seen)
    return EvalReport(setting, dataset.split.name, ts, tr, harmonic_mean(ts, tr), len(labels),
                      per_class_accuracy(predictions, labels, seen + unseen))


def evaluate(predict_fn, dataset: Dataset, codebook: Codebook, setting="gzsl", parallel=None):
    """Score the test split.

    ``predict_fn(X, codebook, classes)`` maps raw test inputs to class ids,
    for example ``functools.partial(trainer.predict, checkpoint)``.
    Raises CoverageError if the codebook misses a candidate class.
    """
    classes = candidate_classes(dataset, setting)
    missing = [c for c in classes if c not in codebook.entries]
    if missing:
        raise CoverageError(missing)
    idx = dataset.test_idx
    if setting == "zsl":
        idx = idx[np.isin(dataset.labels[idx], dataset.split.unseen)]
    if len(idx) == 0:
        raise ValueError("no test instances to score")
    X = dataset.features if dataset.features is not None else dataset.parts
    parallel = parallel or Parallel()
    # fixed-size chunks keep predictions identical for any thread count
    chunks = parallel.map(lambda s: predict_fn(X[idx[s]], codebook, classes), len(idx))
    predictions = np.concatenate(chunks)
    return report_from_predictions(predictions, dataset.labels[idx], dataset, setting)


def comparison_csv(named_reports, path=None):
    """One CSV row per ``(variant, report)`` pair, with a leading variant column."""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=("variant",) + CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for name, report in named_reports:
        w.writerow({"variant": name, **report.csv_row()})
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text
