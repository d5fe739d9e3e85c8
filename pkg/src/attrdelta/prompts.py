"""Prompt data model: tokenized prompts, subject spans, contrastive prompt sets.

A subject is always addressed by the token span of one word in the prompt.
Contrastive prompt sets are the raw material for attribute directions: tuples
of (negative, neutral, positive) phrasings around the same noun, expanded over
a list of prefixes. Phrases mark their subject word with brackets, e.g.
"a photo of an old [person]".
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
import yaml

from .errors import AmbiguousSubword, CausalOrderWarning, SubjectNotFound

_WORD_CHARS = r"0-9A-Za-z_'"
_BRACKET_RE = re.compile(r"\[([^\[\]\s]+)\]")
_VOWELS = "aeiou"


@dataclass(frozen=True)
class Token:
    """One token with its id and half-open char range in the source text.

    Special tokens (BOS/EOS) carry no char range.
    """

    token_id: int
    start: int | None = None
    end: int | None = None

    @property
    def is_special(self) -> bool:
        return self.start is None


@dataclass(frozen=True)
class TokenizedPrompt:
    """Prompt text plus its tokenwise embedding matrix and token metadata."""

    text: str
    tokens: tuple[Token, ...]
    embeddings: np.ndarray  # (N, d)
    encoder_id: str
    special_mask: np.ndarray  # (N,) bool

    def __post_init__(self):
        n = len(self.tokens)
        if self.embeddings.shape[0] != n or self.special_mask.shape[0] != n:
            raise ValueError("token count and embedding rows disagree")
        self.embeddings.setflags(write=False)
        self.special_mask.setflags(write=False)

    @property
    def n_tokens(self) -> int:
        return len(self.tokens)

    @property
    def embedding_dim(self) -> int:
        return self.embeddings.shape[1]

    def token_text(self, index: int) -> str:
        tok = self.tokens[index]
        if tok.is_special:
            return ""
        return self.text[tok.start : tok.end]


@dataclass(frozen=True)
class SubjectSpan:
    """Contiguous token index range [start, end) locating one subject word."""

    start: int
    end: int
    word: str
    occurrence: int = 0

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise ValueError(f"invalid span [{self.start}, {self.end})")

    def __len__(self) -> int:
        return self.end - self.start

    def indices(self) -> range:
        return range(self.start, self.end)


def _word_occurrences(text: str, word: str) -> list[tuple[int, int]]:
    """Char ranges of whole-word, case-insensitive occurrences of `word`."""
    pattern = re.compile(
        rf"(?<![{_WORD_CHARS}]){re.escape(word)}(?![{_WORD_CHARS}])",
        re.IGNORECASE,
    )
    return [(m.start(), m.end()) for m in pattern.finditer(text)]


def locate_subject(tp: TokenizedPrompt, word: str, occurrence: int = 0) -> SubjectSpan:
    """Resolve the occurrence-th whole-word match of `word` to a token span.

    Multi-token words (subword tokenizers) yield spans of length > 1. A match
    whose boundary cuts through a token cannot be expressed as a token span
    and raises AmbiguousSubword.
    """
    if not word:
        raise SubjectNotFound("empty subject word")
    if occurrence < 0:
        raise SubjectNotFound(f"negative occurrence {occurrence}")
    matches = _word_occurrences(tp.text, word)
    if occurrence >= len(matches):
        raise SubjectNotFound(
            f"occurrence {occurrence} of {word!r} not found in {tp.text!r}"
        )
    c_start, c_end = matches[occurrence]
    covering = [
        i
        for i, tok in enumerate(tp.tokens)
        if not tok.is_special and tok.start < c_end and tok.end > c_start
    ]
    if not covering:
        raise SubjectNotFound(f"{word!r} matched only inside special tokens")
    first, last = tp.tokens[covering[0]], tp.tokens[covering[-1]]
    if first.start < c_start or last.end > c_end:
        raise AmbiguousSubword(
            f"{word!r} does not align with token boundaries in {tp.text!r}"
        )
    if covering != list(range(covering[0], covering[-1] + 1)):
        raise AmbiguousSubword(f"tokens covering {word!r} are not contiguous")
    return SubjectSpan(covering[0], covering[-1] + 1, word, occurrence)


def locate_subject_all(tp: TokenizedPrompt, word: str) -> list[SubjectSpan]:
    """All occurrences of `word` as token spans, left to right."""
    spans = []
    for occ in range(len(_word_occurrences(tp.text, word))):
        spans.append(locate_subject(tp, word, occ))
    if not spans:
        raise SubjectNotFound(f"{word!r} not found in {tp.text!r}")
    return spans


# ---------------------------------------------------------------------------
# Contrastive prompt sets


@dataclass(frozen=True)
class PromptTuple:
    """One (negative, neutral, positive) phrasing of an attribute.

    Each phrase marks its subject word in brackets; all three phrases must
    mark the same noun.
    """

    neg: str
    neutral: str
    pos: str

    def __post_init__(self):
        nouns = {subject_of_phrase(p) for p in (self.neg, self.neutral, self.pos)}
        if len(nouns) != 1:
            raise ValueError(f"tuple phrases mark different subjects: {sorted(nouns)}")

    @property
    def subject(self) -> str:
        return subject_of_phrase(self.neutral)


def subject_of_phrase(phrase: str) -> str:
    """The single bracket-marked subject word of a phrase (lowercased)."""
    marks = _BRACKET_RE.findall(phrase)
    if len(marks) != 1:
        raise ValueError(f"phrase must mark exactly one subject word: {phrase!r}")
    return marks[0].lower()


def strip_marking(phrase: str) -> str:
    return _BRACKET_RE.sub(lambda m: m.group(1), phrase)


@dataclass(frozen=True)
class ContrastivePromptSet:
    """Tuples and prefixes that define one attribute direction."""

    attribute_name: str
    tuples: tuple[PromptTuple, ...]
    prefixes: tuple[str, ...]
    subject_nouns: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.tuples:
            raise ValueError("prompt set needs at least one tuple")
        if not self.prefixes:
            raise ValueError("prompt set needs at least one prefix (may be empty string)")
        if not self.subject_nouns:
            nouns = sorted({t.subject for t in self.tuples})
            object.__setattr__(self, "subject_nouns", tuple(nouns))


@dataclass(frozen=True)
class ExpandedTriple:
    """One fully-expanded (minus, neutral, plus) prompt triple."""

    prompt_minus: str
    prompt_neutral: str
    prompt_plus: str
    subject_word: str


def _fix_article(prefix: str, phrase: str) -> str:
    """Swap a trailing 'a'/'an' in the prefix to agree with the next word."""
    words = prefix.split()
    if not words or words[-1].lower() not in ("a", "an"):
        return prefix
    first = phrase.split()[0]
    wants_an = first[:1].lower() in _VOWELS
    article = "an" if wants_an else "a"
    if words[-1][0].isupper():
        article = article.capitalize()
    return " ".join(words[:-1] + [article])


def fix_articles_text(text: str) -> str:
    """Correct every 'a'/'an' in a sentence against its following word."""
    words = text.split()
    for i in range(len(words) - 1):
        if words[i].lower() in ("a", "an"):
            article = "an" if words[i + 1][:1].lower() in _VOWELS else "a"
            if words[i][0].isupper():
                article = article.capitalize()
            words[i] = article
    return " ".join(words)


def _join(prefix: str, phrase: str, fix_articles: bool) -> str:
    if not prefix:
        return phrase
    if fix_articles:
        prefix = _fix_article(prefix, phrase)
    return f"{prefix} {phrase}"


def expand_prompt_set(
    pset: ContrastivePromptSet, fix_articles: bool = True
) -> list[ExpandedTriple]:
    """Cartesian product prefixes x tuples, prefix-major order.

    Output length is exactly len(prefixes) * len(tuples). Bracket markings
    are stripped; the subject word is returned alongside each triple.
    """
    out = []
    for prefix in pset.prefixes:
        for tup in pset.tuples:
            subject = tup.subject
            neg = strip_marking(tup.neg)
            neu = strip_marking(tup.neutral)
            pos = strip_marking(tup.pos)
            out.append(
                ExpandedTriple(
                    prompt_minus=_join(prefix, neg, fix_articles),
                    prompt_neutral=_join(prefix, neu, fix_articles),
                    prompt_plus=_join(prefix, pos, fix_articles),
                    subject_word=subject,
                )
            )
    return out


def warn_on_trailing_attributes(pset: ContrastivePromptSet) -> None:
    """Warn when a tuple's attribute words follow the subject noun.

    Causal text encoders aggregate left to right, so attribute words placed
    after the noun cannot show up in the noun's token embedding.
    """
    for tup in pset.tuples:
        neutral_words = strip_marking(tup.neutral).lower().split()
        for phrase in (tup.neg, tup.pos):
            words = strip_marking(phrase).lower().split()
            try:
                subject_pos = next(
                    i for i, w in enumerate(words) if w == tup.subject
                )
            except StopIteration:
                continue
            extra_after = [
                w for w in words[subject_pos + 1 :] if w not in neutral_words
            ]
            if extra_after:
                warnings.warn(
                    f"attribute words {extra_after} follow the subject "
                    f"{tup.subject!r} in {phrase!r}; a causal encoder will not "
                    "fold them into the subject token",
                    CausalOrderWarning,
                    stacklevel=2,
                )


# ---------------------------------------------------------------------------
# Prompt-set files


def load_prompt_set(path: str | Path) -> ContrastivePromptSet:
    """Load a prompt-set YAML file.

    Expected fields: attribute_name, subject_nouns (optional), prefixes,
    tuples (each with neg / neutral / pos phrases using bracket marking).
    """
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    tuples = tuple(
        PromptTuple(neg=t["neg"], neutral=t["neutral"], pos=t["pos"])
        for t in raw["tuples"]
    )
    return ContrastivePromptSet(
        attribute_name=raw["attribute_name"],
        tuples=tuples,
        prefixes=tuple(raw["prefixes"]),
        subject_nouns=tuple(raw.get("subject_nouns", ())),
    )


def save_prompt_set(pset: ContrastivePromptSet, path: str | Path) -> None:
    doc = {
        "attribute_name": pset.attribute_name,
        "subject_nouns": list(pset.subject_nouns),
        "prefixes": list(pset.prefixes),
        "tuples": [
            {"neg": t.neg, "neutral": t.neutral, "pos": t.pos} for t in pset.tuples
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False, allow_unicode=True)


def builtin_prompt_set_dir() -> Path:
    return Path(__file__).parent / "data" / "promptsets"


def builtin_prompt_sets() -> dict[str, Path]:
    """Name -> path of the prompt-set files shipped with the package."""
    return {p.stem: p for p in sorted(builtin_prompt_set_dir().glob("*.yaml"))}
