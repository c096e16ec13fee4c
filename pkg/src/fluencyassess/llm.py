"""Prompted LLM meta-evaluator: prompt assembly, chat-completion client, reply parsing.

The prompt has two parts.  The system content fixes the task, the metric
definitions, the reply format and a handful of labelled prototypes; the user
content is one JSON object holding the metrics of the utterance to score.
"""

from __future__ import annotations

import json
import logging
import os
import random
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import httpx

from .core import VECTOR_FIELDS, FluencyError, FluencyLabel, MetricVector

log = logging.getLogger(__name__)

DEFAULT_PER_CLASS = 3
DEFAULT_TOKEN_ENV = "OPENAI_API_KEY"
OUTPUT_INSTRUCTION = "respond with exactly one of: low, medium, high"
CLARIFICATION = (
    "Your previous reply could not be read as a fluency class. "
    "Reply again and " + OUTPUT_INSTRUCTION + "."
)


class ResponseParseError(FluencyError):
    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class EndpointError(FluencyError):
    pass


class ConfigError(FluencyError):
    pass


@dataclass(frozen=True)
class Prototype:
    id: str
    vector: MetricVector
    label: FluencyLabel


@dataclass(frozen=True)
class PrototypeSet:
    examples: tuple[Prototype, ...]
    per_class: int

    def __post_init__(self):
        present = {ex.label for ex in self.examples}
        missing = [lab.text for lab in FluencyLabel if lab not in present]
        if missing:
            raise ValueError(f"prototype set has no example for: {', '.join(missing)}")

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(ex.id for ex in self.examples)


def select_prototypes(
    pool: Sequence[tuple[str, MetricVector, FluencyLabel | None]],
    per_class: int = DEFAULT_PER_CLASS,
    seed: int = 42,
    exclude: Sequence[str] = (),
) -> PrototypeSet:
    """Seeded uniform sample of ``per_class`` labelled examples from every class.

    Ids in ``exclude`` (typically the evaluation set) are never chosen.
    """
    if per_class < 1:
        raise ValueError("per_class must be at least 1")
    excluded = set(exclude)
    by_class: dict[FluencyLabel, list[tuple[str, MetricVector]]] = {lab: [] for lab in FluencyLabel}
    for rid, vector, label in pool:
        if label is not None and rid not in excluded:
            by_class[FluencyLabel(label)].append((rid, vector))
    rng = random.Random(seed)
    chosen = []
    for label in FluencyLabel:
        candidates = sorted(by_class[label], key=lambda item: item[0])
        if len(candidates) < per_class:
            raise ValueError(
                f"class {label.name.capitalize()} has {len(candidates)} labelled example(s), need {per_class}"
            )
        for rid, vector in rng.sample(candidates, per_class):
            chosen.append(Prototype(rid, vector, label))
    return PrototypeSet(tuple(chosen), per_class)


@dataclass(frozen=True)
class PromptBundle:
    system_content: str
    user_content: str

    def messages(self) -> list[dict]:
        return [
            {"role": "system", "content": self.system_content},
            {"role": "user", "content": self.user_content},
        ]


_METRIC_NOTES = {
    "language": 'language of the utterance, "malay" or "tamil"',
    "task": 'task type, "R" (reading aloud) or "P" (picture question and answer)',
    "wer": "word error rate of the ASR transcript against the reference text",
    "cer": "character error rate, counted over grapheme clusters",
    "per": "phoneme error rate, counted over IPA transcriptions",
    "pause_duration": "total seconds of silence between words (gaps of at least the pause threshold)",
    "total_duration": "total duration of the utterance in seconds",
    "num_pauses": "number of pauses in the utterance",
    "speed": "speech rate in words per minute (num_words / total_duration * 60)",
    "pause_ratio": "pause_duration / total_duration",
}

_SYSTEM_TEMPLATE = """\
You are an experienced examiner of spoken {languages} for primary school children.
Each utterance you see was recorded in a classroom, either while the child read a \
sentence aloud (task "R") or while the child answered questions about a picture \
(task "P"). It was transcribed by an automatic speech recognizer, and objective \
metrics were computed from the transcript and its word timestamps.

Your task is to rate the speaking fluency of one utterance from its metrics.

Metrics (keys of the input object):
{metric_lines}

Fluency classes:
- low: halting or hard to follow speech; many errors, long or frequent pauses (human scores 1 and 2)
- medium: mostly understandable speech with noticeable errors or hesitation (human score 3)
- high: smooth, accurate speech at a natural pace (human score 4)
Error rates weigh most. Long pauses and a very slow or very fast speech rate lower fluency.

Input format: a single JSON object with the keys listed above.
Output format: the class name only, no explanation.

Rated examples:
{examples}

For the next input, {instruction}."""


def metric_object(vector: MetricVector, fields: Sequence[str] = VECTOR_FIELDS) -> dict:
    obj = {}
    for name, value in vector.as_dict(fields).items():
        obj[name] = round(value, 4) if isinstance(value, float) else value
    return obj


def _dump(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(", ", ": "))


def build_prompt(
    vector: MetricVector,
    prototypes: PrototypeSet,
    fields: Sequence[str] = VECTOR_FIELDS,
) -> PromptBundle:
    """Assemble the system/user prompt pair; ``fields`` drops metrics for ablation."""
    fields = tuple(f for f in VECTOR_FIELDS if f in set(fields))
    metric_lines = "\n".join(f"- {name}: {_METRIC_NOTES[name]}" for name in fields)
    examples = "\n".join(
        f"{_dump(metric_object(ex.vector, fields))} -> {ex.label.text}"
        for ex in sorted(prototypes.examples, key=lambda ex: (-ex.label, ex.id))
    )
    system = _SYSTEM_TEMPLATE.format(
        languages="Malay and Tamil",
        metric_lines=metric_lines,
        examples=examples,
        instruction=OUTPUT_INSTRUCTION,
    )
    return PromptBundle(system, _dump(metric_object(vector, fields)))


_WORD = re.compile(r"\b(low|medium|high)\b", re.IGNORECASE)


def render_label(label: FluencyLabel) -> str:
    return label.text


def parse_response(raw: str) -> FluencyLabel:
    """Read a fluency class from a model reply.

    Accepts a JSON object with a ``"fluency"`` key, or else the first standalone
    word low/medium/high in any case.
    """
    text = (raw or "").strip()
    if text.startswith("{"):
        try:
            obj = json.loads(text)
        except json.JSONDecodeError:
            obj = None
        if isinstance(obj, dict) and "fluency" in obj:
            match = _WORD.fullmatch(str(obj["fluency"]).strip())
            if match:
                return FluencyLabel.parse(match.group(1))
    match = _WORD.search(text)
    if match is None:
        raise ResponseParseError(f"no fluency class in reply {raw!r}", raw=raw or "")
    return FluencyLabel.parse(match.group(1))


@dataclass(frozen=True)
class ScoreResponse:
    label: FluencyLabel
    raw: str
    attempts: int


@dataclass(frozen=True)
class LlmEndpointConfig:
    base_url: str = "https://api.openai.com/v1"
    model: str = "gpt-4o-mini"
    token_env: str = DEFAULT_TOKEN_ENV
    temperature: float = 0.0
    max_retries: int = 2
    timeout: float = 60.0
    max_concurrent: int = 4
    backoff: float = 1.0

    def __post_init__(self):
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")
        if self.max_concurrent < 1:
            raise ConfigError("max_concurrent must be >= 1")

    def token(self) -> str:
        value = os.environ.get(self.token_env, "").strip()
        if not value:
            raise ConfigError(f"environment variable {self.token_env} is not set")
        return value


def _completion_text(payload) -> str:
    try:
        content = payload["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        raise ValueError("reply has no choices[0].message.content") from None
    return content if isinstance(content, str) else ""


def score_via_llm(
    bundle: PromptBundle,
    config: LlmEndpointConfig,
    client: httpx.Client | None = None,
    on_request=None,
) -> ScoreResponse:
    """Ask the chat-completion endpoint for a class, with at most ``max_retries + 1`` requests."""
    token = config.token()
    url = config.base_url.rstrip("/") + "/chat/completions"
    headers = {"Authorization": f"Bearer {token}"}
    messages = bundle.messages()
    own_client = client is None
    client = client or httpx.Client(timeout=config.timeout)
    last_raw, last_error = None, None
    try:
        for attempt in range(1, config.max_retries + 2):
            body = {"model": config.model, "temperature": config.temperature, "messages": messages}
            if on_request is not None:
                on_request()
            try:
                resp = client.post(url, json=body, headers=headers, timeout=config.timeout)
                resp.raise_for_status()
                raw = _completion_text(resp.json())
            except (httpx.HTTPError, ValueError) as exc:
                last_error = exc
                log.warning("chat request %d/%d failed: %s", attempt, config.max_retries + 1, exc)
                if attempt <= config.max_retries and config.backoff:
                    time.sleep(config.backoff * attempt)
                continue
            try:
                return ScoreResponse(parse_response(raw), raw, attempt)
            except ResponseParseError:
                last_raw, last_error = raw, None
                messages = bundle.messages() + [
                    {"role": "assistant", "content": raw},
                    {"role": "user", "content": CLARIFICATION},
                ]
    finally:
        if own_client:
            client.close()
    if last_error is not None and last_raw is None:
        raise EndpointError(f"endpoint failed after {config.max_retries + 1} attempt(s): {last_error}")
    raise ResponseParseError(
        f"no parseable fluency class after {config.max_retries + 1} attempt(s); last reply {last_raw!r}",
        raw=last_raw or "",
    )


STUB_HIGH_BELOW = 0.15
STUB_MEDIUM_BELOW = 0.45


def stub_evaluate(bundle: PromptBundle) -> ScoreResponse:
    """Offline stand-in for the endpoint: composite = wer + 0.5 * pause_ratio.

    A metric missing from the user content contributes nothing, so ablating
    ``wer`` leaves a pause-ratio-only rule.
    """
    try:
        obj = json.loads(bundle.user_content)
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed user content: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise ValueError("user content is not a JSON object")
    try:
        composite = float(obj.get("wer", 0.0)) + 0.5 * float(obj.get("pause_ratio", 0.0))
    except (TypeError, ValueError):
        raise ValueError("wer / pause_ratio are not numbers") from None
    if composite < STUB_HIGH_BELOW:
        label = FluencyLabel.HIGH
    elif composite < STUB_MEDIUM_BELOW:
        label = FluencyLabel.MEDIUM
    else:
        label = FluencyLabel.LOW
    return ScoreResponse(label, render_label(label), 1)


@dataclass
class BatchItem:
    response: ScoreResponse | None = None
    error: str | None = None


@dataclass
class BatchScorer:
    """Scores many bundles with at most ``max_concurrent`` requests in flight."""

    config: LlmEndpointConfig = field(default_factory=LlmEndpointConfig)
    stub: bool = False
    requests_sent: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def _count(self):
        with self._lock:
            self.requests_sent += 1

    def _one(self, client, bundle: PromptBundle) -> BatchItem:
        try:
            if self.stub:
                return BatchItem(stub_evaluate(bundle))
            return BatchItem(score_via_llm(bundle, self.config, client, on_request=self._count))
        except (ResponseParseError, EndpointError, ValueError) as exc:
            return BatchItem(error=f"{type(exc).__name__}: {exc}")

    def score(self, bundles: Sequence[PromptBundle]) -> list[BatchItem]:
        if self.stub:
            return [self._one(None, b) for b in bundles]
        self.config.token()  # fail fast on missing auth
        limits = httpx.Limits(max_connections=self.config.max_concurrent)
        with httpx.Client(timeout=self.config.timeout, limits=limits) as client:
            with ThreadPoolExecutor(max_workers=self.config.max_concurrent) as pool:
                return list(pool.map(lambda b: self._one(client, b), bundles))
