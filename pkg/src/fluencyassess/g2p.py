"""Rule-based grapheme-to-IPA transduction for Malay and Tamil.

Rule files are UTF-8 text, one rule per line::

    pattern<TAB>phonemes<TAB>context

``phonemes`` is a space-separated list of IPA symbols, or ``-`` for a rule
that consumes its pattern without output.  ``context`` is optional and one of
``Any``, ``WordInitial``, ``WordFinal`` or ``BetweenVowels``.  ``#`` starts a
comment.  Lines beginning with ``@`` set table properties:

``@inherent_vowel``  vowel carried by a bare consonant letter
``@virama``          sign that cancels the inherent vowel
``@vowel_signs``     dependent vowel signs that replace the inherent vowel
``@consonants``      letters that carry the inherent vowel
``@vowels``          letters counted as vowels by ``BetweenVowels``
"""

from __future__ import annotations

import enum
import logging
import unicodedata
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

from .core import FluencyError, Language

log = logging.getLogger(__name__)

DELETE = "-"


class RuleTableError(FluencyError):
    pass


class RuleCoverageWarning(UserWarning):
    pass


class Context(enum.Enum):
    ANY = "Any"
    WORD_INITIAL = "WordInitial"
    WORD_FINAL = "WordFinal"
    BETWEEN_VOWELS = "BetweenVowels"

    @classmethod
    def parse(cls, text: str) -> "Context":
        key = text.strip().replace("_", "").replace("-", "").lower()
        for ctx in cls:
            if ctx.value.lower() == key:
                return ctx
        raise RuleTableError(f"unknown context {text!r}")


@dataclass(frozen=True)
class Rule:
    pattern: str
    phonemes: tuple[str, ...]
    context: Context = Context.ANY


def _script_chars(language: Language) -> frozenset[str]:
    if language is Language.MALAY:
        return frozenset("abcdefghijklmnopqrstuvwxyz")
    chars = set()
    for cp in range(0x0B80, 0x0C00):
        ch = chr(cp)
        if unicodedata.category(ch)[0] in "LM":
            chars.add(ch)
    return frozenset(chars)


@dataclass(frozen=True)
class RuleTable:
    language: Language
    rules: tuple[Rule, ...]
    inherent_vowel: str | None = None
    virama: str | None = None
    vowel_signs: frozenset[str] = frozenset()
    consonants: frozenset[str] = frozenset()
    vowels: frozenset[str] = frozenset()
    uncovered: tuple[str, ...] = ()
    _index: dict = field(default=None, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        index: dict[str, list[Rule]] = {}
        for rule in self.rules:
            index.setdefault(rule.pattern[0], []).append(rule)
        object.__setattr__(self, "_index", {k: tuple(v) for k, v in index.items()})

    def candidates(self, ch: str) -> tuple[Rule, ...]:
        return self._index.get(ch, ())


def _order_key(item):
    position, rule = item
    return (-len(rule.pattern), rule.context is Context.ANY, position)


def load_rule_table(data: bytes | str, language: Language) -> RuleTable:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    rules: list[Rule] = []
    props: dict[str, str] = {}
    seen: dict[tuple[str, Context], int] = {}
    for lineno, raw in enumerate(data.splitlines(), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        cols = line.split("\t")
        if cols[0].startswith("@"):
            if len(cols) < 2:
                raise RuleTableError(f"line {lineno}: directive {cols[0]} needs a value")
            props[cols[0][1:].strip()] = unicodedata.normalize("NFC", cols[1].strip())
            continue
        if len(cols) < 2:
            raise RuleTableError(f"line {lineno}: expected pattern<TAB>phonemes")
        pattern = unicodedata.normalize("NFC", cols[0])
        if not pattern:
            raise RuleTableError(f"line {lineno}: empty pattern")
        out = cols[1].split()
        if not out:
            raise RuleTableError(f"line {lineno}: rule {pattern!r} has no phoneme output (use '-' to delete)")
        phonemes = () if out == [DELETE] else tuple(out)
        context = Context.parse(cols[2]) if len(cols) > 2 and cols[2].strip() else Context.ANY
        if (pattern, context) in seen:
            raise RuleTableError(
                f"line {lineno}: duplicate rule for {pattern!r} in context {context.value} "
                f"(first on line {seen[pattern, context]})"
            )
        seen[pattern, context] = lineno
        rules.append(Rule(pattern, phonemes, context))
    if not rules:
        raise RuleTableError("no rules")

    unknown = set(props) - {"inherent_vowel", "virama", "vowel_signs", "consonants", "vowels"}
    if unknown:
        raise RuleTableError(f"unknown directive(s): {', '.join(sorted(unknown))}")
    vowels = frozenset(props.get("vowels", ""))
    if not vowels and any(r.context is Context.BETWEEN_VOWELS for r in rules):
        raise RuleTableError("BetweenVowels rules need a @vowels directive")

    ordered = tuple(rule for _, rule in sorted(enumerate(rules), key=_order_key))
    covered = {rule.pattern for rule in rules if len(rule.pattern) == 1 and rule.context is Context.ANY}
    uncovered = tuple(sorted(_script_chars(language) - covered))
    if uncovered:
        warnings.warn(
            f"{language.value} rule table has no fallback rule for: {' '.join(uncovered)}",
            RuleCoverageWarning,
            stacklevel=2,
        )
    return RuleTable(
        language=language,
        rules=ordered,
        inherent_vowel=props.get("inherent_vowel"),
        virama=props.get("virama"),
        vowel_signs=frozenset(props.get("vowel_signs", "")),
        consonants=frozenset(props.get("consonants", "")),
        vowels=vowels,
        uncovered=uncovered,
    )


@lru_cache(maxsize=None)
def default_table(language: Language) -> RuleTable:
    """The rule table shipped with the package for ``language``."""
    text = resources.files(__package__).joinpath(f"data/{language.value}.rules").read_text("utf-8")
    return load_rule_table(text, language)


@dataclass(frozen=True)
class PhonemeSequence:
    """IPA output for one word.

    ``origins[k]`` is the index into ``normalized`` of the grapheme that
    produced ``phonemes[k]``; an inherent vowel points at its consonant.
    """

    phonemes: tuple[str, ...]
    source_word: str
    normalized: str = ""
    origins: tuple[int, ...] = ()
    skipped: tuple[str, ...] = ()

    def __iter__(self):
        return iter(self.phonemes)

    def __len__(self):
        return len(self.phonemes)


def _context_holds(rule: Rule, word: str, start: int, table: RuleTable) -> bool:
    ctx = rule.context
    if ctx is Context.ANY:
        return True
    end = start + len(rule.pattern)
    if ctx is Context.WORD_INITIAL:
        return start == 0
    if ctx is Context.WORD_FINAL:
        return end == len(word)
    return 0 < start and end < len(word) and word[start - 1] in table.vowels and word[end] in table.vowels


def transcribe_word(word: str, table: RuleTable) -> PhonemeSequence:
    """Greedy longest-match transduction of one whitespace-free word."""
    norm = unicodedata.normalize("NFC", word).lower()
    phonemes: list[str] = []
    origins: list[int] = []
    skipped: list[str] = []
    i, n = 0, len(norm)
    while i < n:
        rule = None
        for cand in table.candidates(norm[i]):
            if norm.startswith(cand.pattern, i) and _context_holds(cand, norm, i, table):
                rule = cand
                break
        if rule is None:
            skipped.append(norm[i])
            i += 1
            continue
        phonemes.extend(rule.phonemes)
        origins.extend([i] * len(rule.phonemes))
        i += len(rule.pattern)
        last = i - 1
        if table.inherent_vowel and norm[last] in table.consonants:
            nxt = norm[i] if i < n else ""
            if nxt and nxt == table.virama:
                i += 1
            elif nxt not in table.vowel_signs:
                phonemes.append(table.inherent_vowel)
                origins.append(last)
    if skipped:
        log.debug("g2p skipped %r in %r", "".join(skipped), word)
    return PhonemeSequence(tuple(phonemes), word, norm, tuple(origins), tuple(skipped))


def transcribe_utterance(text: str, table: RuleTable) -> list[str]:
    """Flat phoneme list for a whole utterance; word boundaries are dropped."""
    out: list[str] = []
    for word in text.split():
        out.extend(transcribe_word(word, table).phonemes)
    return out
