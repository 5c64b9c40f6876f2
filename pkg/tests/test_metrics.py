import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rescaps import metrics as MT
from rescaps.metrics import ConfusionMatrix


def test_confusion_examples():
    assert MT.confusion([1, 1, 0, 0], [1, 0, 0, 1]) == ConfusionMatrix(1, 1, 1, 1)
    assert MT.confusion(["malignant", "benign"], [1, 0]) == ConfusionMatrix(1, 1, 0, 0)
    with pytest.raises(ValueError):
        MT.confusion([1], [1, 0])
    with pytest.raises(ValueError):
        MT.confusion([2], [1])


def test_scalar_metrics_worked_example():
    m = MT.scalar_metrics(ConfusionMatrix(tp=6, tn=3, fp=1, fn=2))
    assert m.acc == pytest.approx(9 / 12)
    assert m.recall == pytest.approx(6 / 8)
    assert m.precision == pytest.approx(6 / 7)
    assert m.spe == pytest.approx(3 / 4)
    assert m.dsc == pytest.approx(12 / 15)
    assert m.mcc == pytest.approx(16 / math.sqrt(1120), abs=1e-15)


def test_perfect_classifier():
    m = MT.scalar_metrics(ConfusionMatrix(5, 5, 0, 0))
    assert (m.acc, m.recall, m.precision, m.spe, m.dsc, m.mcc) == (1, 1, 1, 1, 1, 1)


def test_undefined_rates():
    m = MT.scalar_metrics(ConfusionMatrix(0, 4, 0, 0))
    assert m.acc == 1.0 and m.spe == 1.0
    assert m.recall is None and m.precision is None and m.dsc is None and m.mcc is None
    assert MT.fmt(m.mcc) == "undefined" and MT.fmt(0.5) == "0.500000"


def test_roc_perfect_and_constant():
    curve = MT.roc_curve([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
    assert MT.auc(curve) == 1.0
    assert math.isinf(curve[0].threshold) and (curve[0].tpr, curve[0].fpr) == (0, 0)
    assert (curve[-1].tpr, curve[-1].fpr) == (1, 1)
    const = MT.roc_curve([0.5] * 4, [1, 0, 1, 0])
    assert len(const) == 2 and MT.auc(const) == 0.5


def test_roc_staircase_example():
    curve = MT.roc_curve([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0])
    assert [(p.fpr, p.tpr) for p in curve] == [(0, 0), (0, 0.5), (0.5, 0.5), (0.5, 1), (1, 1)]
    assert MT.auc(curve) == 0.75


def test_roc_single_class_is_undefined():
    with pytest.raises(MT.UndefinedMetricError):
        MT.roc_curve([0.1, 0.2], [1, 1])
    rep = MT.scope_report("overall", [1, 1], [1, 1], [0.3, 0.9])
    assert rep.auc is None


@settings(max_examples=300, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(2, 40), levels=st.integers(1, 6))
def test_auc_matches_pairwise_count_with_ties(seed, n, levels):
    rng = np.random.default_rng(seed)
    truths = rng.integers(0, 2, size=n)
    truths[0], truths[1] = 0, 1
    scores = rng.integers(0, levels, size=n) / levels
    curve = MT.roc_curve(scores, truths)
    assert abs(MT.auc(curve) - MT.pairwise_auc(scores, truths)) < 1e-12
    fpr = [p.fpr for p in curve]
    tpr = [p.tpr for p in curve]
    assert fpr == sorted(fpr) and tpr == sorted(tpr)
    assert len(curve) == len(set(scores.tolist())) + 1


cm_strategy = st.builds(ConfusionMatrix, *[st.integers(0, 50)] * 4).filter(lambda c: c.total > 0)


@settings(max_examples=500, deadline=None)
@given(cm=cm_strategy)
def test_metric_identities(cm):
    m = MT.scalar_metrics(cm)
    for v in m.as_dict().values():
        if v is not None:
            assert -1 - 1e-12 <= v <= 1 + 1e-12
    if m.dsc is not None:
        assert m.dsc == pytest.approx(2 * cm.tp / (2 * cm.tp + cm.fp + cm.fn))
    s = MT.scalar_metrics(cm.swapped())
    assert s.acc == m.acc
    assert s.recall == m.spe and s.spe == m.recall
    if m.mcc is not None:
        assert s.mcc == pytest.approx(m.mcc, abs=1e-12)
    flipped = MT.scalar_metrics(ConfusionMatrix(tp=cm.fn, tn=cm.fp, fp=cm.tn, fn=cm.tp))
    if m.mcc is not None:
        assert flipped.mcc == pytest.approx(-m.mcc, abs=1e-12)


def test_metric_ranges_on_random_matrices():
    rng = np.random.default_rng(0)
    for row in rng.integers(0, 30, size=(10000, 4)):
        cm = ConfusionMatrix(*map(int, row))
        if cm.total == 0:
            continue
        m = MT.scalar_metrics(cm)
        assert 0 <= m.acc <= 1
        assert m.mcc is None or -1 <= m.mcc <= 1


def test_per_magnification_report():
    preds = [1, 0, 1, 1, 0, 0]
    truths = [1, 0, 0, 1, 1, 0]
    mags = [40, 40, 100, 100, 400, 400]
    rep = MT.per_magnification_report(preds, truths, mags, [0.9, 0.1, 0.6, 0.8, 0.4, 0.2])
    assert list(rep) == ["40", "100", "400", "overall"]
    assert rep["40"].metrics.acc == 1.0 and rep["40"].auc == 1.0
    assert rep["100"].confusion == ConfusionMatrix(1, 0, 1, 0)
    assert rep["100"].auc == 1.0 and rep["100"].metrics.mcc is None
    assert rep["overall"].n == 6
    with pytest.raises(ValueError):
        MT.per_magnification_report([1], [1], [60])


def test_mean_and_std():
    assert MT.mean_and_std([1.0, 2.0, 3.0]) == (2.0, 1.0)
    assert MT.mean_and_std([None, 4.0]) == (4.0, None)
    assert MT.mean_and_std([None]) == (None, None)


def test_csv_writers(tmp_path):
    rep = MT.per_magnification_report([1, 1], [1, 1], [40, 40], [0.5, 0.7])
    MT.write_metrics_csv(tmp_path / "m.csv", rep)
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == MT.METRICS_HEADER
    assert lines[1].split(",")[7] == "undefined"
    MT.write_roc_csv(tmp_path / "r.csv", MT.roc_curve([0.9, 0.1], [1, 0]))
    assert (tmp_path / "r.csv").read_text().splitlines()[1] == "inf,0.000000,0.000000"
