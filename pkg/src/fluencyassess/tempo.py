"""Pause and tempo analytics from word timings, and per-utterance metric extraction."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from . import alignment
from .core import DomainError, Language, MetricVector, UtteranceRecord, ValidationError, WordTiming, check_timings
from .g2p import RuleTable, default_table, transcribe_utterance

DEFAULT_PAUSE_THRESHOLD = 0.2

# Timestamps are decimal seconds; a gap printed as 0.2 may subtract to 0.19999999999999996.
_GAP_TOLERANCE = 1e-9


@dataclass(frozen=True)
class PauseStats:
    pause_duration: float
    num_pauses: int
    gaps: tuple[float, ...]


def pause_stats(timings: Sequence[WordTiming], threshold: float = DEFAULT_PAUSE_THRESHOLD) -> PauseStats:
    """Inter-word gaps of at least ``threshold`` seconds count as pauses."""
    if not threshold > 0:
        raise DomainError(f"pause threshold must be positive, got {threshold}")
    check_timings(timings)
    gaps = tuple(nxt.start - prev.end for prev, nxt in zip(timings, timings[1:]))
    pauses = [g for g in gaps if g + _GAP_TOLERANCE >= threshold]
    return PauseStats(float(sum(pauses)), len(pauses), gaps)


def total_duration(record: UtteranceRecord) -> float:
    if record.audio_duration is not None:
        return record.audio_duration
    if record.timings:
        return record.timings[-1].end - record.timings[0].start
    raise ValidationError("no duration source", record_id=record.id)


def speed(word_count: int, total_duration: float) -> float:
    """Words per minute."""
    if not total_duration > 0:
        raise DomainError(f"total_duration must be positive, got {total_duration}")
    return word_count / total_duration * 60


def pause_ratio(pause_duration: float, total_duration: float) -> float:
    if not total_duration > 0:
        raise DomainError(f"total_duration must be positive, got {total_duration}")
    if pause_duration < 0 or pause_duration > total_duration:
        raise DomainError(f"pause_duration {pause_duration} outside [0, {total_duration}]")
    return pause_duration / total_duration


def extract_metric_vector(
    record: UtteranceRecord,
    table: RuleTable | None = None,
    threshold: float = DEFAULT_PAUSE_THRESHOLD,
) -> MetricVector:
    if table is None:
        table = default_table(record.language)
    elif table.language is not record.language:
        raise ValidationError(
            f"rule table is for {table.language.value}, record is {record.language.value}",
            record_id=record.id,
        )
    pauses = pause_stats(record.timings, threshold)
    duration = total_duration(record)
    try:
        ratio = pause_ratio(pauses.pause_duration, duration)
    except DomainError as exc:
        raise ValidationError(str(exc), record_id=record.id) from None
    ref_ph = transcribe_utterance(record.reference, table)
    hyp_ph = transcribe_utterance(record.hypothesis, table)
    return MetricVector(
        language=record.language,
        task=record.task,
        wer=alignment.wer(record.reference, record.hypothesis),
        cer=alignment.cer(record.reference, record.hypothesis),
        per=alignment.per(ref_ph, hyp_ph),
        pause_duration=pauses.pause_duration,
        total_duration=duration,
        num_pauses=pauses.num_pauses,
        speed=speed(len(record.hypothesis.split()), duration),
        pause_ratio=ratio,
    )


def extract_all(
    records: Sequence[UtteranceRecord],
    tables: Mapping[Language, RuleTable] | None = None,
    threshold: float = DEFAULT_PAUSE_THRESHOLD,
) -> list[MetricVector]:
    tables = tables or {}
    return [extract_metric_vector(rec, tables.get(rec.language), threshold) for rec in records]
