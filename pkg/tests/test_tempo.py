import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fluencyassess import alignment
from fluencyassess.core import DomainError, Language, TaskType, UtteranceRecord, ValidationError, WordTiming
from fluencyassess.synthetic import synthetic_records
from fluencyassess.tempo import extract_all, extract_metric_vector, pause_ratio, pause_stats, speed, total_duration


def timings(*spans):
    return [WordTiming(f"w{i}", s, e) for i, (s, e) in enumerate(spans)]


def record(ref, hyp, spans=(), audio=None, language=Language.MALAY):
    return UtteranceRecord("u", language, TaskType.READING, ref, hyp, tuple(timings(*spans)), audio)


def test_pause_stats_examples():
    single = pause_stats(timings((0.0, 0.4)))
    assert (single.num_pauses, single.pause_duration) == (0, 0.0)
    stats = pause_stats(timings((0.0, 0.5), (0.7, 1.2), (1.25, 1.8)), 0.2)
    assert stats.gaps == pytest.approx((0.2, 0.05))
    assert stats.num_pauses == 1
    assert stats.pause_duration == pytest.approx(0.2, abs=1e-12)
    assert pause_stats(timings((0.0, 0.5), (0.6, 1.0)), 0.2).num_pauses == 0


def test_pause_stats_rejects_overlap():
    with pytest.raises(ValidationError):
        pause_stats(timings((0.0, 0.5), (0.4, 1.0)))


def test_pause_stats_rejects_bad_threshold():
    with pytest.raises(DomainError):
        pause_stats(timings((0.0, 0.5)), 0.0)


def test_total_duration():
    assert total_duration(record("a", "a", [(0.0, 0.5)], audio=10.0)) == 10.0
    assert total_duration(record("a b", "a b", [(0.5, 1.0), (2.0, 4.5)])) == 4.0
    with pytest.raises(ValidationError, match="no duration source"):
        total_duration(record("a", ""))


@pytest.mark.parametrize("words, dur, out", [(12, 30, 24.0), (0, 5, 0.0), (7, 60, 7.0)])
def test_speed(words, dur, out):
    assert speed(words, dur) == out


@pytest.mark.parametrize("dur", [0.0, -1.0])
def test_speed_rejects_nonpositive_duration(dur):
    with pytest.raises(DomainError):
        speed(3, dur)


@pytest.mark.parametrize("p, t, out", [(3.0, 10.0, 0.3), (0.0, 8.0, 0.0), (5.0, 5.0, 1.0)])
def test_pause_ratio(p, t, out):
    assert pause_ratio(p, t) == out


@pytest.mark.parametrize("p, t", [(1.0, 0.0), (-0.1, 2.0), (3.0, 2.0)])
def test_pause_ratio_domain(p, t):
    with pytest.raises(DomainError):
        pause_ratio(p, t)


def test_extract_perfect():
    vec = extract_metric_vector(record("saya suka", "saya suka", [(0.0, 0.4), (0.5, 0.9)], audio=1.0))
    assert (vec.wer, vec.cer, vec.per, vec.num_pauses, vec.pause_ratio) == (0.0, 0.0, 0.0, 0, 0.0)


def test_extract_worked_example():
    vec = extract_metric_vector(record("a b c", "a c", [(0.0, 0.5), (1.0, 1.5)], audio=3.0))
    assert vec.wer == pytest.approx(1 / 3, abs=1e-15)
    assert vec.speed == 40.0
    assert vec.num_pauses == 1
    assert vec.pause_duration == 0.5
    assert vec.pause_ratio == pytest.approx(0.5 / 3, abs=1e-15)
    assert vec.language is Language.MALAY and vec.task is TaskType.READING


def test_extract_empty_hypothesis():
    vec = extract_metric_vector(record("a b", "", audio=2.0))
    assert (vec.wer, vec.speed, vec.num_pauses) == (1.0, 0.0, 0)


def test_extract_rejects_wrong_table():
    from fluencyassess.g2p import default_table

    with pytest.raises(ValidationError):
        extract_metric_vector(record("a", "a", audio=1.0), default_table(Language.TAMIL))


def test_extract_pause_longer_than_audio():
    with pytest.raises(ValidationError):
        extract_metric_vector(record("a b", "a b", [(0.0, 0.1), (5.0, 5.1)], audio=1.0))


gap_lists = st.lists(st.floats(0.0, 2.0, allow_nan=False), min_size=0, max_size=10)


def _chain(gaps, offset=0.0, word=0.3):
    spans, t = [], offset
    for g in [0.0] + gaps:
        t += g
        spans.append((t, t + word))
        t += word
    return timings(*spans)


@given(gap_lists, st.floats(0.05, 1.0), st.floats(0.05, 1.0))
def test_more_threshold_fewer_pauses(gaps, t1, t2):
    lo, hi = sorted((t1, t2))
    a, b = pause_stats(_chain(gaps), lo), pause_stats(_chain(gaps), hi)
    assert b.num_pauses <= a.num_pauses
    assert b.pause_duration <= a.pause_duration + 1e-12


@given(gap_lists, st.floats(0.0, 100.0))
def test_time_shift_invariance(gaps, shift):
    a, b = pause_stats(_chain(gaps)), pause_stats(_chain(gaps, offset=shift))
    assert a.num_pauses == b.num_pauses or any(abs(g - 0.2) < 1e-6 for g in gaps)
    assert a.pause_duration == pytest.approx(b.pause_duration, abs=1e-6)


def test_composition_matches_components():
    for rec in synthetic_records(100, seed=3):
        vec = extract_metric_vector(rec)
        assert vec.wer == alignment.wer(rec.reference, rec.hypothesis)
        assert vec.cer == alignment.cer(rec.reference, rec.hypothesis)
        stats = pause_stats(rec.timings)
        assert (vec.num_pauses, vec.pause_duration) == (stats.num_pauses, stats.pause_duration)
        assert abs(vec.speed - len(rec.hypothesis.split()) / vec.total_duration * 60) <= 1e-9
        assert abs(vec.pause_ratio - vec.pause_duration / vec.total_duration) <= 1e-9


def test_extract_all_is_per_record():
    recs = synthetic_records(10, seed=5)
    assert extract_all(recs) == [extract_metric_vector(r) for r in recs]
    assert all(np.isfinite(v.per) for v in extract_all(recs))
