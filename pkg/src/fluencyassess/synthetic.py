"""Synthetic fixtures standing in for the private children's speech corpus."""

from __future__ import annotations

import numpy as np

from .core import FluencyLabel, Language, MetricVector, TaskType, UtteranceRecord, WordTiming

MALAY_WORDS = (
    "saya suka makan nasi goreng ayam ibu bapa adik kakak abang rumah sekolah guru "
    "kucing anjing burung pokok bunga merah biru hijau besar kecil cantik pergi datang "
    "bermain membaca menulis nyanyi lagu pagi petang malam hari ini semalam esok kawan "
    "taman bola kereta basikal hujan panas sejuk makanan minuman air susu roti buku "
    "meja kerusi pintu tingkap jalan kampung bandar pasar ikan sayur buah mangga pisang"
).split()

TAMIL_WORDS = (
    "அம்மா அப்பா தம்பி அக்கா அண்ணா வீடு பள்ளி ஆசிரியர் பூனை நாய் பறவை மரம் பூ "
    "சிவப்பு நீலம் பச்சை பெரிய சின்ன அழகு போ வா விளையாடு படி எழுது பாட்டு காலை "
    "மாலை இரவு இன்று நேற்று நாளை நண்பன் பந்து கார் மழை வெயில் தண்ணீர் பால் ரொட்டி "
    "புத்தகம் மேசை நாற்காலி கதவு சாலை கிராமம் நகரம் சந்தை மீன் காய்கறி பழம் மாம்பழம் வாழைப்பழம்"
).split()

_VOCAB = {Language.MALAY: MALAY_WORDS, Language.TAMIL: TAMIL_WORDS}


def rule_label(wer: float) -> FluencyLabel:
    """The generating rule of the threshold dataset."""
    if wer < 0.1:
        return FluencyLabel.HIGH
    if wer < 0.4:
        return FluencyLabel.MEDIUM
    return FluencyLabel.LOW


def rule_dataset(n: int, seed: int) -> tuple[list[MetricVector], list[FluencyLabel]]:
    """Metric vectors whose label is a function of wer alone; other metrics carry noise."""
    rng = np.random.default_rng(seed)
    vectors, labels = [], []
    for _ in range(n):
        wer = float(rng.uniform(0.0, 0.8))
        duration = float(rng.uniform(2.0, 12.0))
        pause = float(rng.uniform(0.0, 0.4)) * duration
        n_words = int(rng.integers(3, 25))
        vectors.append(
            MetricVector(
                language=Language.MALAY if rng.random() < 0.5 else Language.TAMIL,
                task=TaskType.READING if rng.random() < 0.5 else TaskType.PICTURE,
                wer=wer,
                cer=max(0.0, 0.7 * wer + float(rng.normal(0, 0.03))),
                per=max(0.0, 0.6 * wer + float(rng.normal(0, 0.03))),
                pause_duration=pause,
                total_duration=duration,
                num_pauses=int(rng.integers(0, 6)),
                speed=n_words / duration * 60,
                pause_ratio=pause / duration,
            )
        )
        labels.append(rule_label(wer))
    return vectors, labels


# per fluency score: (word error probability, pause probability between words, pause length range)
_PROFILES = {
    4: (0.02, 0.05, (0.2, 0.4)),
    3: (0.12, 0.2, (0.25, 0.8)),
    2: (0.3, 0.4, (0.4, 1.5)),
    1: (0.5, 0.6, (0.6, 2.5)),
}


def synthetic_record(
    uid: str,
    rng: np.random.Generator,
    language: Language | None = None,
    words: tuple[int, int] = (5, 15),
) -> UtteranceRecord:
    """One labelled utterance; ``words`` is the half-open range of reference lengths."""
    language = language or (Language.MALAY if rng.random() < 0.5 else Language.TAMIL)
    task = TaskType.READING if rng.random() < 0.5 else TaskType.PICTURE
    score = int(rng.choice([1, 2, 3, 4], p=[0.1, 0.2, 0.35, 0.35]))
    err_p, pause_p, (pause_lo, pause_hi) = _PROFILES[score]
    vocab = _VOCAB[language]
    reference = [vocab[i] for i in rng.integers(0, len(vocab), int(rng.integers(*words)))]
    hypothesis = []
    for word in reference:
        r = rng.random()
        if r < err_p / 3:
            continue  # deletion
        if r < 2 * err_p / 3:
            hypothesis.append(vocab[int(rng.integers(0, len(vocab)))])  # substitution
        elif r < err_p:
            hypothesis.extend([word, vocab[int(rng.integers(0, len(vocab)))]])  # insertion
        else:
            hypothesis.append(word)
    t = float(rng.uniform(0.1, 0.6))
    timings = []
    for k, word in enumerate(hypothesis):
        if k and rng.random() < pause_p:
            t += float(rng.uniform(pause_lo, pause_hi))
        else:
            t += float(rng.uniform(0.02, 0.12))
        dur = round(float(rng.uniform(0.25, 0.6)), 3)
        start = round(t, 3)
        timings.append(WordTiming(word, start, round(start + dur, 3)))
        t = start + dur
    audio = round(t + float(rng.uniform(0.2, 0.8)), 3)
    return UtteranceRecord(
        id=uid,
        language=language,
        task=task,
        reference=" ".join(reference),
        hypothesis=" ".join(hypothesis),
        timings=tuple(timings),
        audio_duration=audio,
        human_score=score,
    )


def synthetic_records(n: int, seed: int = 42, words: tuple[int, int] = (5, 15)) -> list[UtteranceRecord]:
    rng = np.random.default_rng(seed)
    return [synthetic_record(f"utt{i:05d}", rng, words=words) for i in range(n)]
