import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fluencyassess.core import METRIC_FIELDS, FluencyLabel, Language, MetricRow
from fluencyassess.evaluation import (
    EnsembleScorer,
    LlmScorer,
    ScoreOutcome,
    UndefinedCorrelationError,
    accuracy,
    balanced_accuracy,
    confusion_matrix,
    evaluate,
    evaluate_groups,
    make_split,
    pearson,
    render_ablation_table,
    render_results_table,
    run_ablation,
    weighted_f1,
)
from fluencyassess.ensemble import ForestConfig
from fluencyassess.llm import BatchScorer
from fluencyassess.synthetic import synthetic_records
from fluencyassess.tempo import extract_metric_vector
from oracles import balanced_accuracy_direct, pearson_direct, pearson_raw_moments, weighted_f1_direct

L, M, H = FluencyLabel.LOW, FluencyLabel.MEDIUM, FluencyLabel.HIGH


def test_pearson_examples():
    assert pearson([1, 2, 3], [2, 4, 6]) == 1.0
    assert pearson([1, 2, 3], [3, 2, 1]) == -1.0
    assert pearson([1, 2, 3], [1, 3, 2]) == pytest.approx(0.5, abs=1e-15)
    assert pearson_direct([1, 2, 3], [1, 3, 2]) == pytest.approx(0.5, abs=1e-15)
    assert pearson_raw_moments([1, 2, 3], [1, 3, 2]) == pytest.approx(0.5, abs=1e-15)


@pytest.mark.parametrize("x, y", [([1, 1, 1], [1, 2, 3]), ([1, 2, 3], [2, 2, 2])])
def test_pearson_undefined(x, y):
    with pytest.raises(UndefinedCorrelationError):
        pearson(x, y)


def test_pearson_errors():
    with pytest.raises(ValueError):
        pearson([1, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        pearson([1], [1])


finite = st.floats(-1e3, 1e3, allow_nan=False)


@given(st.lists(finite, min_size=2, max_size=30), st.floats(0.1, 10), finite)
def test_pearson_affine(x, a, b):
    if np.ptp(x) < 1e-3:
        return
    y = [a * v + b for v in x]
    assert pearson(x, y) == pytest.approx(1.0, abs=1e-9)
    assert pearson(x, [-v for v in y]) == pytest.approx(-1.0, abs=1e-9)


@given(st.lists(st.tuples(finite, finite), min_size=2, max_size=30))
def test_pearson_symmetry(pairs):
    x, y = [p[0] for p in pairs], [p[1] for p in pairs]
    try:
        r = pearson(x, y)
    except UndefinedCorrelationError:
        return
    assert abs(r - pearson(y, x)) <= 1e-12


def test_balanced_accuracy_examples():
    assert balanced_accuracy([L, M, H], [L, M, H]) == 1.0
    assert balanced_accuracy([L, M, H], [L, L, L]) == pytest.approx(1 / 3, abs=1e-15)
    assert balanced_accuracy([L, L], [L, L]) == 1.0
    with pytest.raises(ValueError):
        balanced_accuracy([L], [L, M])


def test_weighted_f1_examples():
    assert weighted_f1([L, M, H], [L, M, H]) == 1.0
    assert weighted_f1([L, L, M], [L, M, M]) == pytest.approx(2 / 3, abs=1e-15)
    assert weighted_f1([L, L, M], [H, H, H]) == 0.0
    with pytest.raises(ValueError):
        weighted_f1([], [])


labels3 = st.lists(st.sampled_from([L, M, H]), min_size=1, max_size=40)


@given(st.integers(1, 30), st.sampled_from([L, M, H]))
def test_constant_predictor_on_balanced_truth(k, c):
    truth = [L, M, H] * k
    assert balanced_accuracy(truth, [c] * len(truth)) == pytest.approx(1 / 3, abs=1e-15)


@given(labels3, st.data())
def test_metric_ranges_and_diagonal(truth, data):
    pred = data.draw(st.lists(st.sampled_from([L, M, H]), min_size=len(truth), max_size=len(truth)))
    f1 = weighted_f1(truth, pred)
    assert 0.0 <= f1 <= 1.0
    assert weighted_f1(truth, truth) == accuracy(truth, truth) == 1.0
    assert confusion_matrix(truth, pred).sum() == len(truth)


def test_metrics_match_direct_formulas_on_random_vectors():
    rng = random.Random(99)
    for _ in range(1000):
        n = rng.randint(2, 60)
        truth = [rng.choice([L, M, H]) for _ in range(n)]
        pred = [rng.choice([L, M, H]) for _ in range(n)]
        assert abs(balanced_accuracy(truth, pred) - balanced_accuracy_direct(truth, pred)) <= 1e-9
        assert abs(weighted_f1(truth, pred) - weighted_f1_direct(truth, pred)) <= 1e-9
        t, p = [int(x) for x in truth], [int(x) for x in pred]
        if len(set(t)) > 1 and len(set(p)) > 1:
            r = pearson(t, p)
            assert abs(r - pearson_direct(t, p)) <= 1e-9
            assert abs(r - pearson_raw_moments(t, p)) <= 1e-9


def test_evaluate_examples():
    rep = evaluate([L, M, H], [L, M, H])
    assert (rep.pearson_r, rep.accuracy, rep.weighted_f1) == (1.0, 1.0, 1.0)
    assert rep.confusion == ((1, 0, 0), (0, 1, 0), (0, 0, 1))
    rep = evaluate([L, M, H], [L, L, L])
    assert rep.accuracy == pytest.approx(1 / 3, abs=1e-15)
    assert [sum(row) for row in rep.confusion] == [1, 1, 1]
    assert rep.pearson_r is None and not rep.pearson_defined
    assert rep.to_json()["pearson_defined"] is False


def test_evaluate_groups():
    truth = [L, M, H, H]
    pred = [L, M, H, M]
    langs = [Language.MALAY, Language.MALAY, Language.TAMIL, Language.TAMIL]
    reps = evaluate_groups(truth, pred, langs)
    assert set(reps) == {"malay", "tamil", "all"}
    assert reps["malay"].accuracy == 1.0 and reps["tamil"].accuracy == 0.5 and reps["all"].n == 4


def test_make_split():
    ids = [f"u{i}" for i in range(20)]
    a, b = make_split(ids, 0.3, 1), make_split(ids, 0.3, 1)
    assert a == b and len(a.test_ids) == 6
    assert not set(a.train_ids) & set(a.test_ids)
    assert set(a.train_ids) | set(a.test_ids) == set(ids)
    full = make_split(ids, 0.0, 1)
    assert full.train_ids == full.test_ids == tuple(ids)
    with pytest.raises(ValueError):
        make_split(ids, 1.0, 1)


@pytest.fixture(scope="module")
def rows():
    recs = synthetic_records(120, seed=11)
    return [MetricRow(r.id, extract_metric_vector(r), r.label) for r in recs]


def test_stub_ablation_shape_and_wer_effect(rows):
    report = run_ablation(rows, LlmScorer(BatchScorer(stub=True)), seed=3)
    assert len(report.rows) == len(METRIC_FIELDS) == 8
    assert [c.excluded for c in report.rows] == list(METRIC_FIELDS)
    by = {c.excluded: c for c in report.rows}
    base = report.baseline.reports["all"]
    assert by["wer"].reports["all"] != base
    # the stub reads only wer and pause_ratio
    for name in ("cer", "per", "speed", "num_pauses"):
        assert by[name].reports["all"] == base
    table = render_ablation_table(report)
    body = table.splitlines()[4:]
    assert [line.split()[0] for line in body] == list(METRIC_FIELDS) + ["base"]
    assert "base" in table and "Malay" in table and "Corr" in table


def test_ensemble_ablation_runs(rows):
    report = run_ablation(rows, EnsembleScorer("forest", seed=1, config=ForestConfig(n_trees=10)), ["wer", "speed"])
    assert [c.excluded for c in report.rows] == ["wer", "speed"]
    assert report.baseline.error is None and report.baseline.reports["all"].n == len(report.split.test_ids)


class _Failing:
    name = "flaky"

    def fit_predict(self, train, test, metrics):
        if "speed" not in metrics:
            raise RuntimeError("boom")
        preds = [r.label if i % 2 else None for i, r in enumerate(test)]
        return ScoreOutcome(preds, [None if p else "parse" for p in preds])


def test_ablation_partial_failures(rows):
    report = run_ablation(rows, _Failing(), ["speed", "wer"], seed=1)
    speed, wer = report.rows
    assert speed.error == "RuntimeError: boom" and not speed.reports
    assert wer.n_failed == (len(report.split.test_ids) + 1) // 2
    assert wer.reports["all"].accuracy == 1.0
    assert "# speed: RuntimeError: boom" in render_ablation_table(report)


def test_ablation_rejects_unlabeled_and_unknown(rows):
    unlabeled = rows[:5] + [MetricRow("x", rows[0].vector, None)]
    with pytest.raises(ValueError, match="labels required"):
        run_ablation(unlabeled, _Failing())
    with pytest.raises(ValueError, match="unknown"):
        run_ablation(rows, _Failing(), ["bogus"])


def test_llm_scorer_excludes_test_ids_from_prototypes(rows, monkeypatch):
    from fluencyassess import llm

    chosen = []
    real = llm.select_prototypes

    def spy(*args, **kwargs):
        protos = real(*args, **kwargs)
        chosen.append(protos)
        return protos

    monkeypatch.setattr(llm, "select_prototypes", spy)
    split = make_split([r.id for r in rows], 0.3, 4)
    test = [r for r in rows if r.id in split.test_ids]
    # train on everything to make sure exclusion is what keeps test rows out
    LlmScorer(BatchScorer(stub=True)).fit_predict(rows, test, METRIC_FIELDS)
    assert chosen and not set(chosen[0].ids) & set(split.test_ids)


def test_results_table():
    reps = {"forest": evaluate_groups([L, M, H], [L, M, M], [Language.MALAY] * 3)}
    text = render_results_table(reps, seed=42, notes=["gpt-audio baseline not reproduced"])
    lines = text.splitlines()
    assert lines[0] == "# fluency scoring results (seed 42)"
    assert lines[-1] == "# gpt-audio baseline not reproduced"
    assert "forest" in text and "  -" in text  # no Tamil rows
