"""Fluency assessment downstream of ASR: metric extraction, ensemble and LLM scoring, evaluation."""

__version__ = "0.1.0"

from .core import (
    Dataset,
    FluencyLabel,
    Language,
    MetricVector,
    TaskType,
    UtteranceRecord,
    WordTiming,
    export_metrics,
    map_score_to_label,
    parse_manifest,
    read_metrics,
)

__all__ = [
    "Dataset",
    "FluencyLabel",
    "Language",
    "MetricVector",
    "TaskType",
    "UtteranceRecord",
    "WordTiming",
    "export_metrics",
    "map_score_to_label",
    "parse_manifest",
    "read_metrics",
]
