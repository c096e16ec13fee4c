"""Acceptance criteria, one marked group per criterion.

The terminal summary prints one PASS/FAIL line per criterion (see conftest.py).
"""

import itertools
import json
import math
import random
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from fluencyassess.alignment import align
from fluencyassess.core import Dataset, DomainError, FluencyLabel, Language, map_score_to_label, serialize_manifest
from fluencyassess.ensemble import feature_matrix, load_model, save_model, train_boosted, train_forest
from fluencyassess.evaluation import balanced_accuracy, pearson, weighted_f1
from fluencyassess.g2p import default_table, transcribe_word
from fluencyassess.llm import BatchScorer, LlmEndpointConfig, ResponseParseError, build_prompt, score_via_llm
from fluencyassess.synthetic import rule_dataset, synthetic_records
from fluencyassess.tempo import extract_all, extract_metric_vector
from llm_fixtures import PROTOTYPES, TARGETS, MockEndpoint
from oracles import balanced_accuracy_direct, pearson_direct, weighted_f1_direct
from test_g2p import MALAY_GOLDEN, TAMIL_GOLDEN, _tamil_alphabet

L, M, H = FluencyLabel.LOW, FluencyLabel.MEDIUM, FluencyLabel.HIGH
GOLDEN = Path(__file__).parent / "golden"

# tolerances and budgets
IDENTITY_TOL = 1e-9
ORACLE_TOL = 1e-9
C1_BUDGET_S = 60.0
C7_BUDGET_S = 5.0
C10_BUDGET_S = 5.0
MIN_BALANCED_ACC = 0.95


def brute_force_distance(a, b):
    """Full-table Levenshtein written from the textbook recurrence."""
    d = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(len(a) + 1):
        d[i][0] = i
    for j in range(len(b) + 1):
        d[0][j] = j
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            d[i][j] = min(d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + (a[i - 1] != b[j - 1]))
    return d[len(a)][len(b)]


@pytest.mark.acceptance(1)
def test_c1_edit_distance_exhaustive():
    seqs = [s for n in range(6) for s in itertools.product("abc", repeat=n)]
    start = time.perf_counter()
    mismatches = 0
    for a in seqs:
        for b in seqs:
            mismatches += align(a, b).distance != brute_force_distance(a, b)
    elapsed = time.perf_counter() - start
    print(f"C1: {len(seqs) ** 2} pairs, {mismatches} mismatches, {elapsed:.1f}s")
    assert mismatches == 0
    assert elapsed < C1_BUDGET_S


@pytest.mark.acceptance(2)
def test_c2_metric_identities():
    records = synthetic_records(1000, seed=2024)
    worst_speed = worst_ratio = 0.0
    for rec in records:
        vec = extract_metric_vector(rec)
        words = len(rec.hypothesis.split())
        worst_speed = max(worst_speed, abs(vec.speed - words / vec.total_duration * 60))
        worst_ratio = max(worst_ratio, abs(vec.pause_ratio - vec.pause_duration / vec.total_duration))
    print(f"C2: max |speed err| {worst_speed:.2e}, max |pause_ratio err| {worst_ratio:.2e}")
    assert worst_speed <= IDENTITY_TOL and worst_ratio <= IDENTITY_TOL


@pytest.mark.acceptance(3)
def test_c3_label_merge():
    assert {s: map_score_to_label(s) for s in (1, 2, 3, 4)} == {1: L, 2: L, 3: M, 4: H}
    for bad in (0, 5, -1):
        with pytest.raises(DomainError):
            map_score_to_label(bad)


@pytest.mark.acceptance(4)
def test_c4_g2p_golden_files():
    assert len(MALAY_GOLDEN) >= 20 and len(TAMIL_GOLDEN) >= 20
    for lang, rows in ((Language.MALAY, MALAY_GOLDEN), (Language.TAMIL, TAMIL_GOLDEN)):
        table = default_table(lang)
        for word, ipa in rows:
            assert " ".join(transcribe_word(word, table).phonemes).encode() == ipa.encode(), word


@pytest.mark.acceptance(4)
def test_c4_tamil_inherent_vowel_law():
    table = default_table(Language.TAMIL)
    consonants, signs, vowels = _tamil_alphabet(table)
    rng = random.Random(4)
    pool = consonants * 3 + signs + [table.virama] * 4 + vowels
    for _ in range(1000):
        word = "".join(rng.choice(pool) for _ in range(rng.randint(1, 12)))
        seq = transcribe_word(word, table)
        norm = seq.normalized
        for j, ch in enumerate(norm):
            if ch not in table.consonants:
                continue
            nxt = norm[j + 1] if j + 1 < len(norm) else ""
            emitted = [p for p, o in zip(seq.phonemes, seq.origins) if o == j]
            if nxt == table.virama or nxt in table.vowel_signs:
                assert table.inherent_vowel not in emitted, word
            else:
                assert emitted[-1] == table.inherent_vowel, word


@pytest.fixture(scope="module")
def rule_split():
    train_v, train_y = rule_dataset(60, seed=1)
    test_v, test_y = rule_dataset(300, seed=2)
    return feature_matrix(train_v), train_y, feature_matrix(test_v), test_y


@pytest.mark.acceptance(5)
@pytest.mark.parametrize("trainer", [train_forest, train_boosted], ids=["forest", "boosted"])
def test_c5_classifier_sanity(trainer, rule_split):
    X, y, X_test, y_test = rule_split
    model = trainer(X, y, seed=42)
    bacc = balanced_accuracy(y_test, model.predict_labels(X_test))
    print(f"C5 {model.kind}: held-out balanced accuracy {bacc:.4f}")
    assert bacc >= MIN_BALANCED_ACC
    again = trainer(X, y, seed=42)
    assert save_model(again) == save_model(model)
    grid = np.random.default_rng(0).uniform(0, 1, (100, X.shape[1]))
    loaded = load_model(save_model(model))
    assert np.array_equal(loaded.predict_proba(grid), model.predict_proba(grid))
    assert np.array_equal(loaded.predict_proba(X_test), model.predict_proba(X_test))


@pytest.mark.acceptance(6)
def test_c6_metric_oracles():
    rng = random.Random(6)
    worst = 0.0
    for _ in range(1000):
        n = rng.randint(3, 50)
        truth = [rng.choice([L, M, H]) for _ in range(n)]
        pred = [rng.choice([L, M, H]) for _ in range(n)]
        worst = max(worst, abs(balanced_accuracy(truth, pred) - balanced_accuracy_direct(truth, pred)))
        worst = max(worst, abs(weighted_f1(truth, pred) - weighted_f1_direct(truth, pred)))
        t, p = [int(x) for x in truth], [int(x) for x in pred]
        if len(set(t)) > 1 and len(set(p)) > 1:
            worst = max(worst, abs(pearson(t, p) - pearson_direct(t, p)))
    print(f"C6: worst oracle deviation {worst:.2e}")
    assert worst <= ORACLE_TOL


@pytest.mark.acceptance(6)
def test_c6_worked_examples():
    assert pearson([1, 2, 3], [1, 3, 2]) == 0.5
    assert balanced_accuracy([L, M, H], [L, L, L]) == 1 / 3
    assert weighted_f1([L, L, M], [L, M, M]) == 2 / 3


def _cli(*args, cwd):
    return subprocess.run([sys.executable, "-m", "fluencyassess.cli", *map(str, args)], cwd=cwd, capture_output=True, text=True)


@pytest.mark.acceptance(7)
def test_c7_end_to_end_stub_run(tmp_path):
    manifest = tmp_path / "manifest.jsonl"
    manifest.write_bytes(serialize_manifest(Dataset(synthetic_records(50, seed=7))))
    start = time.perf_counter()
    steps = [
        ("extract", manifest, "-o", "metrics.csv"),
        ("score", "metrics.csv", "--stub", "-o", "pred.csv"),
        ("evaluate", "gpt-meta=pred.csv", "--truth", manifest, "-o", "report.json", "--text-output", "report.txt"),
    ]
    for step in steps:
        proc = _cli(*step, cwd=tmp_path)
        assert proc.returncode == 0, proc.stderr
    elapsed = time.perf_counter() - start
    proc = _cli("ablate", "metrics.csv", "--scorer", "llm-stub", "-o", "ablation.json", "--text-output", "ablation.txt", cwd=tmp_path)
    assert proc.returncode == 0, proc.stderr
    print(f"C7: extract -> score -> evaluate in {elapsed:.2f}s")
    assert elapsed < C7_BUDGET_S

    table = (tmp_path / "report.txt").read_text().splitlines()
    assert table[2].split() == ["Method"] + ["Corr", "BAcc", "Acc", "F1"] * 3
    assert table[1].split() == ["Malay", "Tamil", "All"]
    assert table[4].split()[0] == "gpt-meta"
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["methods"]["gpt-meta"]["all"]["n"] == 50

    ablation = json.loads((tmp_path / "ablation.json").read_text())
    assert len(ablation["rows"]) == 8 and ablation["baseline"]["excluded"] is None
    body = (tmp_path / "ablation.txt").read_text().splitlines()[4:]
    assert len(body) == 9 and body[-1].split()[0] == "base"


@pytest.fixture
def live_config(monkeypatch):
    monkeypatch.setenv("FA_ACCEPT_TOKEN", "t")

    def make(url, **kw):
        return LlmEndpointConfig(base_url=url, token_env="FA_ACCEPT_TOKEN", backoff=0.0, timeout=5.0, **kw)

    return make


@pytest.mark.acceptance(8)
@pytest.mark.parametrize("retries", [0, 2, 3])
def test_c8_retry_bound(live_config, retries):
    with MockEndpoint(lambda n, body: "???") as mock:
        with pytest.raises(ResponseParseError):
            score_via_llm(build_prompt(TARGETS["malay_reading"], PROTOTYPES), live_config(mock.url, max_retries=retries))
    assert mock.calls == retries + 1


@pytest.mark.acceptance(8)
def test_c8_malformed_forever_is_per_row(live_config):
    bundles = [build_prompt(TARGETS[name], PROTOTYPES) for name in sorted(TARGETS)] * 3
    with MockEndpoint(lambda n, body: "I cannot decide") as mock:
        scorer = BatchScorer(live_config(mock.url, max_retries=2, max_concurrent=2))
        items = scorer.score(bundles)
    assert len(items) == 6 and all(it.response is None and "ResponseParseError" in it.error for it in items)
    assert mock.calls == 6 * 3


@pytest.mark.acceptance(8)
def test_c8_concurrency_cap(live_config):
    bundles = [build_prompt(TARGETS["tamil_picture"], PROTOTYPES)] * 24
    for cap in (1, 4):
        with MockEndpoint(lambda n, body: "high", delay=0.03) as mock:
            items = BatchScorer(live_config(mock.url, max_concurrent=cap)).score(bundles)
        assert all(it.response.label is H for it in items)
        print(f"C8: cap {cap}, peak in-flight {mock.in_flight_max}")
        assert mock.in_flight_max <= cap


@pytest.mark.acceptance(9)
@pytest.mark.parametrize("name", sorted(TARGETS))
def test_c9_prompt_snapshot(name):
    expected = (GOLDEN / f"prompt_{name}.txt").read_bytes()
    runs = []
    for _ in range(2):
        b = build_prompt(TARGETS[name], PROTOTYPES)
        runs.append(("=== system ===\n" + b.system_content + "\n=== user ===\n" + b.user_content + "\n").encode("utf-8"))
    assert runs[0] == runs[1] == expected


@pytest.mark.acceptance(10)
def test_c10_extraction_throughput():
    records = synthetic_records(1000, seed=10, words=(18, 23))
    mean_words = sum(len(r.reference.split()) for r in records) / len(records)
    assert 18 <= mean_words <= 22
    for lang in Language:
        default_table(lang)  # rule-file loading is not part of the budget
    start = time.perf_counter()
    vectors = extract_all(records)
    elapsed = time.perf_counter() - start
    print(f"C10: {len(vectors)} utterances (mean {mean_words:.1f} words) in {elapsed:.2f}s")
    assert len(vectors) == 1000 and all(math.isfinite(v.per) for v in vectors)
    assert elapsed < C10_BUDGET_S
