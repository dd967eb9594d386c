"""Multi-class evaluation: confusion matrix, per-class P/R/F1, macro averages.

Degenerate classes (0/0 in precision, recall, or F1) score 0 and raise a
flag rather than erroring, so macro averages stay defined over all K
classes. Macro values are computed from unrounded per-class scores;
rounding happens only at display time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from importlib import resources

import numpy as np

CLASS_NAMES = ["Dropout", "Enrolled", "Graduate"]


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # K x K, rows = true, cols = predicted

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def tp(self, k: int) -> int:
        return int(self.counts[k, k])

    def fp(self, k: int) -> int:
        return int(self.counts[:, k].sum() - self.counts[k, k])

    def fn(self, k: int) -> int:
        return int(self.counts[k, :].sum() - self.counts[k, k])

    def tn(self, k: int) -> int:
        return self.total - self.tp(k) - self.fp(k) - self.fn(k)


@dataclass
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int
    undefined: bool


@dataclass
class MetricsReport:
    accuracy: float
    per_class: list[ClassScores]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    n: int
    class_names: list[str] = field(default_factory=lambda: list(CLASS_NAMES))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        d = dict(d)
        d["per_class"] = [ClassScores(**c) for c in d["per_class"]]
        return cls(**d)


def _ratio(num: int, den: int) -> tuple[float, bool]:
    if den == 0:
        return 0.0, True
    return num / den, False


def confusion(y_true, y_pred, k: int = 3) -> ConfusionMatrix:
    y_true = np.asarray(y_true, dtype=np.int64).reshape(-1)
    y_pred = np.asarray(y_pred, dtype=np.int64).reshape(-1)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"length mismatch: {y_true.shape[0]} vs {y_pred.shape[0]}")
    if y_true.size == 0:
        raise ValueError("cannot evaluate empty vectors")
    for name, arr in (("y_true", y_true), ("y_pred", y_pred)):
        bad = (arr < 0) | (arr >= k)
        if bad.any():
            raise ValueError(f"{name} contains label {arr[bad][0]} outside 0..{k - 1}")
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (y_true, y_pred), 1)
    return ConfusionMatrix(counts)


def evaluate(y_true, y_pred, k: int = 3, class_names: list[str] | None = None) -> MetricsReport:
    cm = confusion(y_true, y_pred, k)
    per_class = []
    for c in range(k):
        tp, fp, fn = cm.tp(c), cm.fp(c), cm.fn(c)
        prec, p_undef = _ratio(tp, tp + fp)
        rec, r_undef = _ratio(tp, tp + fn)
        if prec + rec == 0.0:
            f1, f_undef = 0.0, True
        else:
            f1, f_undef = 2.0 * prec * rec / (prec + rec), False
        per_class.append(
            ClassScores(
                precision=prec,
                recall=rec,
                f1=f1,
                support=tp + fn,
                undefined=p_undef or r_undef or f_undef,
            )
        )
    accuracy = sum(cm.tp(c) for c in range(k)) / cm.total
    names = class_names if class_names is not None else list(CLASS_NAMES[:k])
    if len(names) != k:
        names = [f"class{i}" for i in range(k)]
    return MetricsReport(
        accuracy=accuracy,
        per_class=per_class,
        macro_precision=float(np.mean([c.precision for c in per_class])),
        macro_recall=float(np.mean([c.recall for c in per_class])),
        macro_f1=float(np.mean([c.f1 for c in per_class])),
        n=cm.total,
        class_names=names,
    )


def _pct(x: float) -> str:
    return f"{100.0 * x:.2f}%"


def load_reference_results() -> list[dict]:
    """Bundled reference rows: reported values, not recomputed here."""
    text = resources.files("dropgraph.data").joinpath("reference_results.json").read_text()
    return json.loads(text)["overall"]


def compare_report(named_reports: list[tuple[str, MetricsReport]],
                   reference: list[dict] | None = None) -> tuple[str, str]:
    """Render a model-comparison table as (csv_text, aligned_text).

    One row per measured report plus one per reference entry; values are
    accuracy and macro precision/recall/F1 as 2-decimal percentages.
    """
    if not named_reports:
        raise ValueError("compare_report needs at least one report")
    rows = []
    for name, rep in named_reports:
        rows.append(
            (name, "measured", _pct(rep.accuracy), _pct(rep.macro_precision),
             _pct(rep.macro_recall), _pct(rep.macro_f1))
        )
    for ref in reference or []:
        rows.append(
            (ref["model"], "reported", _pct(ref["accuracy"]), _pct(ref["precision"]),
             _pct(ref["recall"]), _pct(ref["f1"]))
        )
    header = ("Model", "Origin", "Accuracy", "Precision", "Recall", "F1-Score")
    csv_lines = [",".join(header)]
    for row in rows:
        model = f'"{row[0]}"' if "," in row[0] else row[0]
        csv_lines.append(",".join([model] + list(row[1:])))
    widths = [max(len(header[i]), max(len(r[i]) for r in rows)) for i in range(len(header))]
    text_lines = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(header))]
    text_lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        text_lines.append("  ".join(str(v).ljust(widths[i]) for i, v in enumerate(row)))
    return "\n".join(csv_lines) + "\n", "\n".join(text_lines) + "\n"
