"""Attribute deltas and the training-free embedding-difference extractor.

An attribute delta is a single d-dimensional direction in an encoder's
tokenwise embedding space. Added (scaled) to the token rows of a subject
word, it modulates that attribute for that subject only. The cheapest way to
get one is contrastive: average, over all expanded prompt pairs, the
difference between the subject-span embeddings of the positive and negative
prompts.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone

import numpy as np

from .encoders import TextEncoder
from .errors import DimensionMismatch, NoValidPairs
from .prompts import (
    ContrastivePromptSet,
    SubjectSpan,
    TokenizedPrompt,
    expand_prompt_set,
    locate_subject,
    warn_on_trailing_attributes,
)

METHODS = ("clip_diff", "learned", "pair_inversion_masked")


def config_digest(payload: dict) -> str:
    """Stable short digest of a config mapping, for provenance fields."""
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _utcnow() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class AttributeDelta:
    """One learned or extracted attribute direction.

    The vector is stored float32, the on-disk precision; all arithmetic that
    produces a vector happens in float64 and is rounded once here.
    """

    attribute_name: str
    vector: np.ndarray  # (d,) float32
    encoder_id: str
    method: str
    training_nouns: tuple[str, ...] = ()
    config_digest: str = ""
    created_at: str = field(default_factory=_utcnow)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        vec = np.ascontiguousarray(self.vector, dtype=np.float32)
        if vec.ndim != 1 or vec.shape[0] == 0:
            raise DimensionMismatch("delta vector must be 1-D and non-empty")
        vec.setflags(write=False)
        object.__setattr__(self, "vector", vec)
        if isinstance(self.training_nouns, list):
            object.__setattr__(self, "training_nouns", tuple(self.training_nouns))

    @property
    def dim(self) -> int:
        return self.vector.shape[0]

    def scaled(self, s: float) -> np.ndarray:
        """Float64 copy of the vector times s (for in-math use)."""
        return self.vector.astype(np.float64) * s

    def renamed(self, name: str) -> "AttributeDelta":
        return replace(self, attribute_name=name)

    def identity_key(self) -> tuple:
        """Content key; equal keys mean the same direction may be merged."""
        return (
            self.attribute_name,
            self.encoder_id,
            self.method,
            self.config_digest,
            self.vector.tobytes(),
        )


def span_mean(tp: TokenizedPrompt, span: SubjectSpan) -> np.ndarray:
    """Mean of the embedding rows covered by a subject span (float64)."""
    if span.end > tp.n_tokens:
        raise DimensionMismatch("span exceeds token count")
    return tp.embeddings[span.start : span.end].astype(np.float64).mean(axis=0)


def extract_clip_diff_delta(
    encoder: TextEncoder,
    pset: ContrastivePromptSet,
    fix_articles: bool = True,
) -> AttributeDelta:
    """Average positive-minus-negative subject embedding over expanded pairs.

    Pairs that fail subject resolution are skipped; all pairs failing raises
    NoValidPairs. The per-pair differences are summed in a canonical order
    (sorted by prompt-pair content) so the result does not depend on the
    order of tuples or prefixes, and swapping positive and negative phrases
    yields the exact IEEE negation.
    """
    warn_on_trailing_attributes(pset)
    triples = expand_prompt_set(pset, fix_articles=fix_articles)
    entries: list[tuple[tuple, np.ndarray]] = []
    skipped = 0
    for tr in triples:
        try:
            tp_plus = encoder.encode(tr.prompt_plus)
            tp_minus = encoder.encode(tr.prompt_minus)
            span_plus = locate_subject(tp_plus, tr.subject_word)
            span_minus = locate_subject(tp_minus, tr.subject_word)
        except Exception:
            skipped += 1
            continue
        diff = span_mean(tp_plus, span_plus) - span_mean(tp_minus, span_minus)
        # Sign-symmetric sort key: identical for (plus, minus) and (minus, plus).
        key = (
            min(tr.prompt_plus, tr.prompt_minus),
            max(tr.prompt_plus, tr.prompt_minus),
            tr.subject_word,
        )
        entries.append((key, diff))
    if not entries:
        raise NoValidPairs(
            f"no usable pairs in prompt set {pset.attribute_name!r} "
            f"({skipped} skipped)"
        )
    entries.sort(key=lambda e: e[0])
    stacked = np.stack([diff for _, diff in entries])
    vector = stacked.sum(axis=0) / len(entries)
    return AttributeDelta(
        attribute_name=pset.attribute_name,
        vector=vector.astype(np.float32),
        encoder_id=encoder.encoder_id,
        method="clip_diff",
        training_nouns=tuple(pset.subject_nouns),
        config_digest=config_digest(
            {
                "method": "clip_diff",
                "encoder": encoder.encoder_id,
                "pairs": len(entries),
                "fix_articles": fix_articles,
            }
        ),
    )
