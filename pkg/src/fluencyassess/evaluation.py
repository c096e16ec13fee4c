"""Scoring-quality metrics, per-language reports and the feature ablation harness."""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .core import METRIC_FIELDS, FluencyError, FluencyLabel, Language, MetricRow

LABELS = tuple(FluencyLabel)


class UndefinedCorrelationError(FluencyError, ValueError):
    pass


def _check_lengths(truth, pred):
    if len(truth) != len(pred):
        raise ValueError(f"length mismatch: {len(truth)} truth vs {len(pred)} predictions")
    if len(truth) == 0:
        raise ValueError("need at least one label")


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Product-moment correlation; raises UndefinedCorrelationError on zero variance."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y):
        raise ValueError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise ValueError("pearson needs at least two points")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    # separate roots only when the product underflows; the product form is exact on the easy cases
    denom = math.sqrt(sxx * syy) or math.sqrt(sxx) * math.sqrt(syy)
    if denom == 0.0:
        raise UndefinedCorrelationError("correlation undefined: zero variance")
    r = float(dx @ dy) / denom
    return max(-1.0, min(1.0, r))


def confusion_matrix(truth: Sequence[FluencyLabel], pred: Sequence[FluencyLabel]) -> np.ndarray:
    """3x3 counts, rows = truth, columns = prediction, in Low/Medium/High order."""
    _check_lengths(truth, pred)
    cm = np.zeros((3, 3), dtype=np.int64)
    for t, p in zip(truth, pred):
        cm[int(t) - 1, int(p) - 1] += 1
    return cm


def accuracy(truth, pred) -> float:
    cm = confusion_matrix(truth, pred)
    return float(np.trace(cm) / cm.sum())


def balanced_accuracy(truth, pred) -> float:
    """Mean recall over the classes present in ``truth``."""
    cm = confusion_matrix(truth, pred)
    support = cm.sum(axis=1)
    present = support > 0
    return float((np.diag(cm)[present] / support[present]).mean())


def weighted_f1(truth, pred) -> float:
    cm = confusion_matrix(truth, pred)
    tp = np.diag(cm).astype(float)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    denom = support + predicted
    # F1 = 2TP / (2TP + FP + FN); classes with no support and no predictions score 0
    f1 = np.divide(2 * tp, denom, out=np.zeros(3), where=denom > 0)
    return float((support * f1).sum() / support.sum())


@dataclass(frozen=True)
class EvaluationReport:
    pearson_r: float | None
    accuracy: float
    balanced_accuracy: float
    weighted_f1: float
    confusion: tuple[tuple[int, ...], ...]
    n: int

    @property
    def pearson_defined(self) -> bool:
        return self.pearson_r is not None

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "pearson_r": self.pearson_r,
            "pearson_defined": self.pearson_defined,
            "accuracy": self.accuracy,
            "balanced_accuracy": self.balanced_accuracy,
            "weighted_f1": self.weighted_f1,
            "confusion": [list(row) for row in self.confusion],
            "confusion_labels": [lab.text for lab in LABELS],
        }


def evaluate(truth: Sequence[FluencyLabel], pred: Sequence[FluencyLabel]) -> EvaluationReport:
    _check_lengths(truth, pred)
    try:
        r = pearson([int(t) for t in truth], [int(p) for p in pred])
    except (UndefinedCorrelationError, ValueError):
        r = None
    cm = confusion_matrix(truth, pred)
    return EvaluationReport(
        pearson_r=r,
        accuracy=accuracy(truth, pred),
        balanced_accuracy=balanced_accuracy(truth, pred),
        weighted_f1=weighted_f1(truth, pred),
        confusion=tuple(tuple(int(c) for c in row) for row in cm),
        n=int(cm.sum()),
    )


GROUPS = ("malay", "tamil", "all")


def evaluate_groups(
    truth: Sequence[FluencyLabel],
    pred: Sequence[FluencyLabel],
    languages: Sequence[Language],
) -> dict[str, EvaluationReport]:
    """Reports for each language present and for all rows together."""
    out = {}
    for lang in Language:
        idx = [i for i, lg in enumerate(languages) if lg is lang]
        if idx:
            out[lang.value] = evaluate([truth[i] for i in idx], [pred[i] for i in idx])
    if truth:
        out["all"] = evaluate(truth, pred)
    return out


# ---------------------------------------------------------------- ablation


@dataclass(frozen=True)
class Split:
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]


def make_split(ids: Sequence[str], test_fraction: float, seed: int) -> Split:
    """Seeded random split; ``test_fraction == 0`` trains and tests on everything."""
    ids = list(ids)
    if not 0.0 <= test_fraction < 1.0:
        raise ValueError("test_fraction must be in [0, 1)")
    if test_fraction == 0.0:
        return Split(tuple(ids), tuple(ids))
    shuffled = sorted(ids)
    random.Random(seed).shuffle(shuffled)
    n_test = max(1, round(len(ids) * test_fraction))
    test = set(shuffled[:n_test])
    return Split(tuple(i for i in ids if i not in test), tuple(i for i in ids if i in test))


@dataclass
class ScoreOutcome:
    predictions: list[FluencyLabel | None]
    errors: list[str | None]


class Scorer(Protocol):
    name: str

    def fit_predict(
        self, train: Sequence[MetricRow], test: Sequence[MetricRow], metrics: Sequence[str]
    ) -> ScoreOutcome:
        """Fit on ``train`` using only ``metrics`` and predict ``test``."""


@dataclass
class EnsembleScorer:
    kind: str = "forest"
    seed: int = 42
    config: object = None
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("forest", "boosted"):
            raise ValueError(f"unknown ensemble kind {self.kind!r}")
        self.name = self.name or self.kind

    def fit_predict(self, train, test, metrics):
        from . import ensemble

        excluded = [m for m in METRIC_FIELDS if m not in metrics]
        order = ensemble.features_without(excluded)
        X = ensemble.feature_matrix([r.vector for r in train], order)
        labels = [r.label for r in train]
        if self.kind == "forest":
            model = ensemble.train_forest(X, labels, self.config or ensemble.ForestConfig(), self.seed, order)
        else:
            model = ensemble.train_boosted(X, labels, self.config or ensemble.BoostConfig(), self.seed, order)
        preds = model.predict_labels(ensemble.feature_matrix([r.vector for r in test], order))
        return ScoreOutcome(list(preds), [None] * len(preds))


@dataclass
class LlmScorer:
    batch: object  # llm.BatchScorer
    per_class: int = 3
    seed: int = 42
    name: str = "gpt-meta"

    def fit_predict(self, train, test, metrics):
        from . import llm

        pool = [(r.id, r.vector, r.label) for r in train]
        prototypes = llm.select_prototypes(pool, self.per_class, self.seed, exclude=[r.id for r in test])
        fields = ("language", "task") + tuple(m for m in METRIC_FIELDS if m in metrics)
        bundles = [llm.build_prompt(r.vector, prototypes, fields) for r in test]
        items = self.batch.score(bundles)
        return ScoreOutcome(
            [it.response.label if it.response else None for it in items],
            [it.error for it in items],
        )


@dataclass
class AblationCell:
    excluded: str | None
    reports: dict[str, EvaluationReport] = field(default_factory=dict)
    error: str | None = None
    n_failed: int = 0

    def to_json(self) -> dict:
        return {
            "excluded": self.excluded,
            "error": self.error,
            "n_failed": self.n_failed,
            "reports": {k: v.to_json() for k, v in self.reports.items()},
        }


@dataclass
class AblationReport:
    scorer: str
    baseline: AblationCell
    rows: list[AblationCell]
    seed: int
    split: Split

    def to_json(self) -> dict:
        return {
            "scorer": self.scorer,
            "seed": self.seed,
            "n_train": len(self.split.train_ids),
            "n_test": len(self.split.test_ids),
            "rows": [cell.to_json() for cell in self.rows],
            "baseline": self.baseline.to_json(),
        }


def _run_cell(scorer, train, test, metrics, excluded) -> AblationCell:
    cell = AblationCell(excluded)
    try:
        outcome = scorer.fit_predict(train, test, metrics)
    except Exception as exc:  # one failed cell must not sink the whole table
        cell.error = f"{type(exc).__name__}: {exc}"
        return cell
    ok = [i for i, p in enumerate(outcome.predictions) if p is not None]
    cell.n_failed = len(test) - len(ok)
    if cell.n_failed:
        first = next(e for e in outcome.errors if e)
        cell.error = f"{cell.n_failed} row(s) failed; first: {first}"
    if ok:
        cell.reports = evaluate_groups(
            [test[i].label for i in ok],
            [outcome.predictions[i] for i in ok],
            [test[i].vector.language for i in ok],
        )
    return cell


def run_ablation(
    rows: Sequence[MetricRow],
    scorer: Scorer,
    features: Sequence[str] = METRIC_FIELDS,
    split: Split | None = None,
    seed: int = 42,
) -> AblationReport:
    """Leave each metric in ``features`` out in turn, refit/re-prompt, and evaluate against human labels.

    The baseline and every ablated cell start from the full metric set.
    """
    unknown = set(features) - set(METRIC_FIELDS)
    if unknown:
        raise ValueError(f"unknown feature(s): {', '.join(sorted(unknown))}")
    missing = [r.id for r in rows if r.label is None]
    if missing:
        raise ValueError(f"human labels required; unlabeled: {', '.join(missing[:5])}")
    split = split or make_split([r.id for r in rows], 0.3, seed)
    by_id = {r.id: r for r in rows}
    train = [by_id[i] for i in split.train_ids]
    test = [by_id[i] for i in split.test_ids]
    baseline = _run_cell(scorer, train, test, METRIC_FIELDS, None)
    cells = [
        _run_cell(scorer, train, test, tuple(f for f in METRIC_FIELDS if f != excluded), excluded)
        for excluded in features
    ]
    return AblationReport(getattr(scorer, "name", "scorer"), baseline, cells, seed, split)


# ---------------------------------------------------------------- rendering


def _fmt(value: float | None) -> str:
    return "undef" if value is None else f"{value:.2f}"


def _group_cells(reports: dict[str, EvaluationReport], groups) -> list[str]:
    cells = []
    for g in groups:
        rep = reports.get(g)
        if rep is None:
            cells += ["-"] * 4
        else:
            cells += [_fmt(rep.pearson_r), _fmt(rep.balanced_accuracy), _fmt(rep.accuracy), _fmt(rep.weighted_f1)]
    return cells


def _table(header_top: list[str], header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header_top, widths)).rstrip()]
    lines.append("  ".join(h.rjust(w) if i else h.ljust(w) for i, (h, w) in enumerate(zip(header, widths))))
    lines.append("-" * len(lines[-1]))
    for row in rows:
        lines.append("  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(row, widths))))
    return "\n".join(lines)


_SUB = ["Corr", "BAcc", "Acc", "F1"]


def _headers(first: str, groups):
    top = [""] + sum(([g.capitalize() if g != "all" else "All"] + [""] * 3 for g in groups), [])
    return top, [first] + _SUB * len(groups)


def render_results_table(
    results: dict[str, dict[str, EvaluationReport]], seed: int, groups=GROUPS, notes: Sequence[str] = ()
) -> str:
    """Methods x {Corr, balanced Acc, plain Acc, weighted F1} per language."""
    top, header = _headers("Method", groups)
    rows = [[name] + _group_cells(reps, groups) for name, reps in results.items()]
    lines = [f"# fluency scoring results (seed {seed})", _table(top, header, rows)]
    lines += [f"# {note}" for note in notes]
    return "\n".join(lines) + "\n"


def render_ablation_table(report: AblationReport, groups=GROUPS) -> str:
    top, header = _headers("Excluded", groups)
    rows = []
    for cell in report.rows + [report.baseline]:
        name = cell.excluded or "base"
        rows.append([name] + _group_cells(cell.reports, groups))
    lines = [
        f"# ablation: scorer {report.scorer}, seed {report.seed}, "
        f"{len(report.split.train_ids)} train / {len(report.split.test_ids)} test",
        _table(top, header, rows),
    ]
    for cell in report.rows + [report.baseline]:
        if cell.error:
            lines.append(f"# {cell.excluded or 'base'}: {cell.error}")
    return "\n".join(lines) + "\n"
