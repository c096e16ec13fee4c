"""Levenshtein alignment over token sequences and the WER / CER / PER rates built on it."""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np
import regex


@dataclass(frozen=True)
class AlignmentResult:
    substitutions: int
    insertions: int
    deletions: int
    hits: int
    reference_length: int

    @property
    def distance(self) -> int:
        return self.substitutions + self.insertions + self.deletions


def _cost_matrix(ref_ids: np.ndarray, hyp_ids: np.ndarray) -> np.ndarray:
    n, m = len(ref_ids), len(hyp_ids)
    cost = np.empty((n + 1, m + 1), dtype=np.int64)
    offsets = np.arange(m + 1, dtype=np.int64)
    cost[0] = offsets
    cost[1:, 0] = np.arange(1, n + 1)
    mismatch = (ref_ids[:, None] != hyp_ids[None, :]).astype(np.int64)
    diag = np.empty(m, dtype=np.int64)
    shifted = np.empty(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        prev, row = cost[i - 1], cost[i]
        # deletion (from above) and match/substitution (diagonal)
        np.add(prev[:-1], mismatch[i - 1], out=diag)
        np.add(prev[1:], 1, out=row[1:])
        np.minimum(row[1:], diag, out=row[1:])
        # insertions chain left to right: row[j] = min_k row[k] + (j - k)
        np.subtract(row, offsets, out=shifted)
        np.minimum.accumulate(shifted, out=shifted)
        np.add(shifted, offsets, out=row)
    return cost


def align(reference: Sequence[Hashable], hypothesis: Sequence[Hashable]) -> AlignmentResult:
    """Minimum-edit alignment with unit costs.

    Among equal-cost alignments the backtrace prefers a diagonal step (hit or
    substitution), then a deletion, then an insertion.
    """
    n, m = len(reference), len(hypothesis)
    if n == 0 or m == 0:
        return AlignmentResult(0, m, n, 0, n)
    vocab: dict = {}
    ref_ids = np.fromiter((vocab.setdefault(t, len(vocab)) for t in reference), np.int64, n)
    hyp_ids = np.fromiter((vocab.setdefault(t, len(vocab)) for t in hypothesis), np.int64, m)
    cost = _cost_matrix(ref_ids, hyp_ids).tolist()
    ref_l, hyp_l = ref_ids.tolist(), hyp_ids.tolist()

    s = ins = dels = hits = 0
    i, j = n, m
    while i > 0 or j > 0:
        here = cost[i][j]
        if i > 0 and j > 0:
            same = ref_l[i - 1] == hyp_l[j - 1]
            if here == cost[i - 1][j - 1] + (0 if same else 1):
                if same:
                    hits += 1
                else:
                    s += 1
                i -= 1
                j -= 1
                continue
        if i > 0 and here == cost[i - 1][j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return AlignmentResult(s, ins, dels, hits, n)


def error_rate(result: AlignmentResult) -> float:
    """(S + I + D) / N; an empty reference scores 0.0 against an empty hypothesis, else 1.0."""
    if result.reference_length == 0:
        return 0.0 if result.insertions == 0 else 1.0
    return result.distance / result.reference_length


def words(text: str) -> list[str]:
    return unicodedata.normalize("NFC", text).split()


def graphemes(text: str) -> list[str]:
    """Extended grapheme clusters of NFC text, with each whitespace run collapsed to one space."""
    return regex.findall(r"\X", " ".join(words(text)))


def wer(reference: str, hypothesis: str) -> float:
    return error_rate(align(words(reference), words(hypothesis)))


def cer(reference: str, hypothesis: str) -> float:
    return error_rate(align(graphemes(reference), graphemes(hypothesis)))


def per(reference_phonemes: Sequence[str], hypothesis_phonemes: Sequence[str]) -> float:
    return error_rate(align(list(reference_phonemes), list(hypothesis_phonemes)))
