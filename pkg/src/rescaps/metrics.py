"""Binary classification metrics with malignant as the positive class.

Rates whose denominator is zero are reported as ``None`` (undefined) rather
than silently substituted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

POSITIVE = "malignant"
MAGNIFICATIONS = (40, 100, 200, 400)


class UndefinedMetricError(ValueError):
    pass


def _as_binary(labels) -> np.ndarray:
    out = []
    for x in labels:
        if isinstance(x, str):
            if x not in ("benign", "malignant"):
                raise ValueError(f"unknown label {x!r}")
            out.append(1 if x == POSITIVE else 0)
        else:
            if x not in (0, 1):
                raise ValueError(f"binary labels must be 0/1, got {x!r}")
            out.append(int(x))
    return np.array(out, dtype=int)


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def swapped(self) -> "ConfusionMatrix":
        """Same predictions with the positive class convention reversed."""
        return ConfusionMatrix(tp=self.tn, tn=self.tp, fp=self.fn, fn=self.fp)


def confusion(predictions, truths) -> ConfusionMatrix:
    pred, true = _as_binary(predictions), _as_binary(truths)
    if pred.size != true.size:
        raise ValueError(f"length mismatch: {pred.size} predictions vs {true.size} truths")
    if pred.size == 0:
        raise ValueError("cannot build a confusion matrix from empty input")
    return ConfusionMatrix(
        tp=int(np.sum((pred == 1) & (true == 1))),
        tn=int(np.sum((pred == 0) & (true == 0))),
        fp=int(np.sum((pred == 1) & (true == 0))),
        fn=int(np.sum((pred == 0) & (true == 1))),
    )


def _ratio(num: float, den: float) -> float | None:
    return None if den == 0 else num / den


def dice(precision: float | None, recall: float | None) -> float | None:
    """Harmonic mean of precision and recall."""
    if precision is None or recall is None or precision + recall == 0:
        return None
    return 2.0 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class MetricsReport:
    acc: float | None
    recall: float | None
    precision: float | None
    spe: float | None
    dsc: float | None
    mcc: float | None

    def as_dict(self) -> dict[str, float | None]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def scalar_metrics(cm: ConfusionMatrix) -> MetricsReport:
    if cm.total < 1:
        raise ValueError("confusion matrix is empty")
    tp, tn, fp, fn = cm.tp, cm.tn, cm.fp, cm.fn
    recall = _ratio(tp, tp + fn)
    precision = _ratio(tp, tp + fp)
    den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    return MetricsReport(
        acc=(tp + tn) / cm.total,
        recall=recall,
        precision=precision,
        spe=_ratio(tn, tn + fp),
        dsc=dice(precision, recall),
        mcc=None if den == 0 else (tp * tn - fp * fn) / math.sqrt(den),
    )


# ---------------------------------------------------------------------------
# ROC


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    tpr: float
    fpr: float


def roc_curve(scores, truths) -> list[RocPoint]:
    """One point per distinct score (descending), preceded by the +inf sentinel.

    A sample counts as positive at threshold t when its score >= t.
    """
    s = np.asarray(scores, dtype=float)
    y = _as_binary(truths)
    if s.size != y.size:
        raise ValueError(f"length mismatch: {s.size} scores vs {y.size} truths")
    pos, neg = int(y.sum()), int(y.size - y.sum())
    if pos == 0 or neg == 0:
        raise UndefinedMetricError("AUC undefined: truths contain a single class")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    points = [RocPoint(math.inf, 0.0, 0.0)]
    tp = fp = 0
    i = 0
    while i < s.size:
        j = i
        while j < s.size and s[j] == s[i]:
            tp += y[j]
            fp += 1 - y[j]
            j += 1
        points.append(RocPoint(float(s[i]), tp / pos, fp / neg))
        i = j
    return points


def auc(curve: Sequence[RocPoint]) -> float:
    """Trapezoidal area under the curve over fpr."""
    area = 0.0
    for a, b in zip(curve, curve[1:]):
        area += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2.0
    return area


def pairwise_auc(scores, truths) -> float:
    """Brute-force Mann-Whitney statistic: P(score_pos > score_neg) + 0.5 P(tie)."""
    s = np.asarray(scores, dtype=float)
    y = _as_binary(truths)
    pos, neg = s[y == 1], s[y == 0]
    if pos.size == 0 or neg.size == 0:
        raise UndefinedMetricError("AUC undefined: truths contain a single class")
    wins = 0.0
    for p in pos:
        for n in neg:
            wins += 1.0 if p > n else 0.5 if p == n else 0.0
    return wins / (pos.size * neg.size)


# ---------------------------------------------------------------------------
# grouped reports


@dataclass(frozen=True)
class ScopeReport:
    scope: str
    metrics: MetricsReport
    auc: float | None
    n: int
    confusion: ConfusionMatrix


def scope_report(scope: str, predictions, truths, scores=None) -> ScopeReport:
    cm = confusion(predictions, truths)
    area = None
    if scores is not None:
        try:
            area = auc(roc_curve(scores, truths))
        except UndefinedMetricError:
            area = None
    return ScopeReport(scope, scalar_metrics(cm), area, cm.total, cm)


def per_magnification_report(predictions, truths, magnifications, scores=None
                             ) -> dict[str, ScopeReport]:
    """Metrics per magnification present (keys '40', '100', ...) plus 'overall'."""
    pred, true = list(predictions), list(truths)
    mags = [int(m) for m in magnifications]
    if not len(pred) == len(true) == len(mags):
        raise ValueError("predictions, truths and magnifications must align")
    for m in mags:
        if m not in MAGNIFICATIONS:
            raise ValueError(f"magnification {m} not in {MAGNIFICATIONS}")
    sc = None if scores is None else list(scores)
    out: dict[str, ScopeReport] = {}
    for m in MAGNIFICATIONS:
        idx = [i for i, x in enumerate(mags) if x == m]
        if not idx:
            continue
        out[str(m)] = scope_report(
            str(m), [pred[i] for i in idx], [true[i] for i in idx],
            None if sc is None else [sc[i] for i in idx],
        )
    out["overall"] = scope_report("overall", pred, true, sc)
    return out


def mean_and_std(values: Sequence[float | None]) -> tuple[float | None, float | None]:
    """Unweighted mean and sample std over the defined values."""
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    mean = float(np.mean(vals))
    std = float(np.std(vals, ddof=1)) if len(vals) > 1 else None
    return mean, std


# ---------------------------------------------------------------------------
# CSV output


def fmt(value: float | None) -> str:
    return "undefined" if value is None else f"{value:.6f}"


METRICS_HEADER = "scope,acc,recall,precision,spe,dsc,mcc,auc,n"


def write_metrics_csv(path, reports: dict[str, ScopeReport]) -> None:
    lines = [METRICS_HEADER]
    for rep in reports.values():
        m = rep.metrics
        lines.append(",".join([rep.scope, fmt(m.acc), fmt(m.recall), fmt(m.precision),
                               fmt(m.spe), fmt(m.dsc), fmt(m.mcc), fmt(rep.auc), str(rep.n)]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="")


def write_roc_csv(path, curve: Sequence[RocPoint]) -> None:
    lines = ["threshold,fpr,tpr"]
    for p in curve:
        thr = "inf" if math.isinf(p.threshold) else f"{p.threshold:.6f}"
        lines.append(f"{thr},{p.fpr:.6f},{p.tpr:.6f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="")


def write_confusion_csv(path, cm: ConfusionMatrix) -> None:
    Path(path).write_text(f"tp,tn,fp,fn\n{cm.tp},{cm.tn},{cm.fp},{cm.fn}\n",
                          encoding="utf-8", newline="")
