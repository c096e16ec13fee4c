"""Domain types, manifest ingestion, label mapping and metric export.

A manifest is UTF-8 JSON Lines, one utterance per line::

    {"id": "u1", "language": "malay", "task": "R",
     "reference": "saya suka makan", "hypothesis": "saya makan",
     "timings": [{"token": "saya", "start": 0.0, "end": 0.4}, ...],
     "audio_duration": 2.5, "human_score": 3}

``audio_duration`` and ``human_score`` are optional.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence


class FluencyError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(FluencyError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(FluencyError):
    def __init__(self, message: str, record_id: str | None = None, line: int | None = None):
        self.detail = message
        self.record_id = record_id
        self.line = line
        prefix = []
        if line is not None:
            prefix.append(f"line {line}")
        if record_id is not None:
            prefix.append(f"record {record_id!r}")
        if prefix:
            message = f"{', '.join(prefix)}: {message}"
        super().__init__(message)

    def located(self, record_id: str | None = None, line: int | None = None) -> "ValidationError":
        return ValidationError(
            self.detail,
            record_id=self.record_id if self.record_id is not None else record_id,
            line=self.line if self.line is not None else line,
        )


class DomainError(FluencyError, ValueError):
    """An argument outside the domain of a numeric operation."""


class Language(str, enum.Enum):
    MALAY = "malay"
    TAMIL = "tamil"

    @property
    def display(self) -> str:
        return self.value.capitalize()

    @classmethod
    def parse(cls, value: str) -> "Language":
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValidationError(f"unknown language {value!r}") from None


class TaskType(str, enum.Enum):
    READING = "R"
    PICTURE = "P"

    @classmethod
    def parse(cls, value: str) -> "TaskType":
        try:
            return cls(str(value).strip().upper())
        except ValueError:
            raise ValidationError(f"unknown task {value!r} (expected 'R' or 'P')") from None


class FluencyLabel(enum.IntEnum):
    """Merged three-way fluency class; the int value is the ordinal encoding."""

    LOW = 1
    MEDIUM = 2
    HIGH = 3

    @property
    def ordinal_value(self) -> int:
        return int(self)

    @property
    def text(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, value: str) -> "FluencyLabel":
        try:
            return cls[str(value).strip().upper()]
        except KeyError:
            raise ValidationError(f"unknown fluency label {value!r}") from None


def map_score_to_label(score: int) -> FluencyLabel:
    """Map a 1-4 human fluency score onto the merged classes (1 and 2 are both low)."""
    if isinstance(score, bool) or score not in (1, 2, 3, 4):
        raise DomainError(f"fluency score must be one of 1, 2, 3, 4; got {score!r}")
    if score <= 2:
        return FluencyLabel.LOW
    return FluencyLabel.MEDIUM if score == 3 else FluencyLabel.HIGH


@dataclass(frozen=True)
class WordTiming:
    token: str
    start: float
    end: float

    def __post_init__(self):
        if not (math.isfinite(self.start) and math.isfinite(self.end)):
            raise ValidationError(f"non-finite timing for token {self.token!r}")
        if self.start < 0:
            raise ValidationError(f"negative start for token {self.token!r}")
        if self.end <= self.start:
            raise ValidationError(f"timing end must exceed start for token {self.token!r}")


def check_timings(timings: Sequence[WordTiming]) -> None:
    """Raise ValidationError unless timings are sorted by start and do not overlap."""
    for prev, nxt in zip(timings, timings[1:]):
        if nxt.start < prev.end:
            raise ValidationError(
                f"timings overlap or are unsorted: {prev.token!r} ends at {prev.end}, "
                f"{nxt.token!r} starts at {nxt.start}"
            )


@dataclass(frozen=True)
class UtteranceRecord:
    id: str
    language: Language
    task: TaskType
    reference: str
    hypothesis: str
    timings: tuple[WordTiming, ...] = ()
    audio_duration: float | None = None
    human_score: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "timings", tuple(self.timings))
        try:
            self._validate()
        except ValidationError as exc:
            raise exc.located(record_id=self.id) from None

    def _validate(self):
        if not isinstance(self.id, str) or not self.id:
            raise ValidationError("id must be a non-empty string")
        if not isinstance(self.language, Language):
            raise ValidationError(f"language must be a Language, got {self.language!r}")
        if not isinstance(self.task, TaskType):
            raise ValidationError(f"task must be a TaskType, got {self.task!r}")
        if self.timings:
            n_tokens = len(self.hypothesis.split())
            if len(self.timings) != n_tokens:
                raise ValidationError(
                    f"timings count {len(self.timings)} != hypothesis token count {n_tokens}"
                )
            check_timings(self.timings)
        if self.audio_duration is not None:
            if not math.isfinite(self.audio_duration) or self.audio_duration <= 0:
                raise ValidationError(f"audio_duration must be positive, got {self.audio_duration}")
        if self.human_score is not None:
            if isinstance(self.human_score, bool) or self.human_score not in (1, 2, 3, 4):
                raise ValidationError(f"human_score must be in 1..4, got {self.human_score!r}")

    @property
    def label(self) -> FluencyLabel | None:
        if self.human_score is None:
            return None
        return map_score_to_label(self.human_score)

    def to_json(self) -> dict:
        obj = {
            "id": self.id,
            "language": self.language.value,
            "task": self.task.value,
            "reference": self.reference,
            "hypothesis": self.hypothesis,
            "timings": [{"token": t.token, "start": t.start, "end": t.end} for t in self.timings],
        }
        if self.audio_duration is not None:
            obj["audio_duration"] = self.audio_duration
        if self.human_score is not None:
            obj["human_score"] = self.human_score
        return obj


# Order of the eight numeric metrics everywhere (export columns, features, prompts).
METRIC_FIELDS = (
    "wer",
    "cer",
    "per",
    "pause_duration",
    "total_duration",
    "num_pauses",
    "speed",
    "pause_ratio",
)
VECTOR_FIELDS = ("language", "task") + METRIC_FIELDS


@dataclass(frozen=True)
class MetricVector:
    language: Language
    task: TaskType
    wer: float
    cer: float
    per: float
    pause_duration: float
    total_duration: float
    num_pauses: int
    speed: float
    pause_ratio: float

    def __post_init__(self):
        for name in METRIC_FIELDS:
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValidationError(f"metric {name} is not finite: {value}")
            if value < 0:
                raise ValidationError(f"metric {name} is negative: {value}")
        if self.total_duration <= 0:
            raise ValidationError("total_duration must be positive")
        if self.pause_ratio > 1.0 + 1e-9:
            raise ValidationError(f"pause_ratio above 1: {self.pause_ratio}")

    def as_dict(self, fields: Iterable[str] = VECTOR_FIELDS) -> dict:
        out = {}
        for name in fields:
            value = getattr(self, name)
            out[name] = value.value if isinstance(value, enum.Enum) else value
        return out


@dataclass
class Dataset:
    records: list[UtteranceRecord]
    metrics: list[MetricVector] | None = None
    lines: list[int] | None = field(default=None, repr=False)

    def __post_init__(self):
        seen = set()
        for rec in self.records:
            if rec.id in seen:
                raise ValidationError("duplicate id", record_id=rec.id)
            seen.add(rec.id)
        if self.metrics is not None and len(self.metrics) != len(self.records):
            raise ValidationError("metrics not index-aligned with records")

    def __len__(self):
        return len(self.records)

    @property
    def labels(self) -> list[FluencyLabel | None]:
        return [rec.label for rec in self.records]

    def with_metrics(self, metrics: list[MetricVector]) -> "Dataset":
        return Dataset(list(self.records), list(metrics), self.lines)


def _record_from_json(obj: dict) -> UtteranceRecord:
    if not isinstance(obj, dict):
        raise ValidationError("record must be a JSON object")
    missing = [k for k in ("id", "language", "task", "reference", "hypothesis") if k not in obj]
    if missing:
        raise ValidationError(f"missing field(s) {', '.join(missing)}", record_id=obj.get("id"))
    rid = obj["id"]
    try:
        timings = []
        for t in obj.get("timings") or []:
            timings.append(WordTiming(str(t["token"]), float(t["start"]), float(t["end"])))
        audio = obj.get("audio_duration")
        score = obj.get("human_score")
        if score is not None and not (isinstance(score, int) and not isinstance(score, bool)):
            raise ValidationError(f"human_score must be an integer, got {score!r}")
        return UtteranceRecord(
            id=str(rid),
            language=Language.parse(obj["language"]),
            task=TaskType.parse(obj["task"]),
            reference=str(obj["reference"]),
            hypothesis=str(obj["hypothesis"]),
            timings=tuple(timings),
            audio_duration=None if audio is None else float(audio),
            human_score=score,
        )
    except ValidationError as exc:
        raise exc.located(record_id=str(rid)) from None
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"bad field value: {exc}", record_id=str(rid)) from None


def iter_manifest(data: bytes | str):
    """Yield ``(line_number, record_or_exception)`` for every non-blank manifest line."""
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            yield 0, ParseError(f"manifest is not valid UTF-8: {exc}")
            return
    for lineno, line in enumerate(data.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            yield lineno, ParseError(f"malformed record: {exc.msg}", line=lineno)
            continue
        try:
            yield lineno, _record_from_json(obj)
        except ValidationError as exc:
            yield lineno, exc.located(line=lineno)


def parse_manifest(data: bytes | str, strict: bool = True):
    """Parse a JSON Lines manifest into a Dataset.

    With ``strict=False`` bad lines are dropped and a ``(dataset, errors)`` pair
    is returned instead of raising on the first problem.
    """
    records, lines, errors = [], [], []
    seen: dict[str, int] = {}
    for lineno, item in iter_manifest(data):
        if isinstance(item, Exception):
            if strict:
                raise item
            errors.append(item)
            continue
        if item.id in seen:
            err = ValidationError(
                f"duplicate id (first seen on line {seen[item.id]})", record_id=item.id, line=lineno
            )
            if strict:
                raise err
            errors.append(err)
            continue
        seen[item.id] = lineno
        records.append(item)
        lines.append(lineno)
    dataset = Dataset(records, lines=lines)
    return dataset if strict else (dataset, errors)


def serialize_manifest(dataset: Dataset) -> bytes:
    lines = [json.dumps(rec.to_json(), ensure_ascii=False) for rec in dataset.records]
    return "".join(line + "\n" for line in lines).encode("utf-8")


EXPORT_HEADER = ("id", "language", "task") + METRIC_FIELDS + ("label",)


def export_metrics(dataset: Dataset) -> bytes:
    if dataset.metrics is None:
        if dataset.records:
            raise ValidationError("no metrics attached", record_id=dataset.records[0].id)
        metrics = []
    else:
        metrics = dataset.metrics
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(EXPORT_HEADER)
    for rec, vec in zip(dataset.records, metrics):
        if vec is None:
            raise ValidationError("no metrics attached", record_id=rec.id)
        label = rec.label
        writer.writerow(
            [rec.id, vec.language.value, vec.task.value]
            + [f"{float(getattr(vec, name)):.6f}" for name in METRIC_FIELDS]
            + [label.text if label is not None else ""]
        )
    return buf.getvalue().encode("utf-8")


@dataclass(frozen=True)
class MetricRow:
    """One row of an exported metrics file."""

    id: str
    vector: MetricVector
    label: FluencyLabel | None


def read_metrics(data: bytes | str) -> list[MetricRow]:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    reader = csv.reader(io.StringIO(data))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty metrics file", line=1) from None
    if tuple(header[: len(EXPORT_HEADER) - 1]) != EXPORT_HEADER[:-1]:
        raise ParseError(f"unexpected metrics header {header}", line=1)
    rows, seen = [], set()
    for lineno, cells in enumerate(reader, start=2):
        if not cells:
            continue
        if len(cells) < len(EXPORT_HEADER) - 1:
            raise ParseError(f"expected {len(EXPORT_HEADER)} columns, got {len(cells)}", line=lineno)
        rid = cells[0]
        if rid in seen:
            raise ValidationError("duplicate id", record_id=rid, line=lineno)
        seen.add(rid)
        try:
            nums = [float(c) for c in cells[3 : 3 + len(METRIC_FIELDS)]]
        except ValueError as exc:
            raise ParseError(f"bad number: {exc}", line=lineno) from None
        values = dict(zip(METRIC_FIELDS, nums))
        values["num_pauses"] = int(round(values["num_pauses"]))
        try:
            vec = MetricVector(Language.parse(cells[1]), TaskType.parse(cells[2]), **values)
        except ValidationError as exc:
            raise exc.located(record_id=rid, line=lineno) from None
        label_cell = cells[3 + len(METRIC_FIELDS)] if len(cells) > 3 + len(METRIC_FIELDS) else ""
        label = FluencyLabel.parse(label_cell) if label_cell.strip() else None
        rows.append(MetricRow(rid, vec, label))
    return rows
