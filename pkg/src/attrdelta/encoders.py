"""Text encoders producing tokenwise embedding matrices.

Attribute deltas live in the tokenwise embedding space of a text encoder, so
everything downstream is parameterized by an encoder handle. Two toy encoder
families run at test scale with fully deterministic embeddings; production
encoders (CLIP-family) plug in behind the same interface and are registered
here as metadata-only stubs until their weights are wired up.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import AdapterUnavailable, EmptyPrompt, PromptTooLong
from .prompts import Token, TokenizedPrompt

_WS_TOKEN_RE = re.compile(r"\S+")

BOS_ID = 0
EOS_ID = 1
_WORD_ID_BASE = 2


def _stable_seed(*parts: str) -> int:
    h = hashlib.sha256("|".join(parts).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "little")


class TextEncoder:
    """Interface: prompt text -> TokenizedPrompt.

    Attributes
    ----------
    encoder_id : str
        Registry key; persisted alongside deltas for compatibility checks.
    embedding_dim : int
        Width d of the embedding matrix.
    max_tokens : int
        Hard cap on sequence length including special tokens.
    special_token_positions : tuple[int, ...]
        Row positions (negative = from the end) that are never edited.
    """

    encoder_id: str
    embedding_dim: int
    max_tokens: int
    special_token_positions: tuple[int, ...] = (0, -1)

    def encode(self, prompt: str) -> TokenizedPrompt:
        raise NotImplementedError

    def encode_unconditional(self) -> TokenizedPrompt:
        """Embedding of the empty prompt (special tokens only)."""
        raise NotImplementedError


@dataclass
class ToyTextEncoder(TextEncoder):
    """Deterministic whitespace-token encoder over R^embedding_dim.

    Each distinct lowercased token string gets a fixed unit vector seeded by
    sha256(encoder_id | token), so embeddings are bit-identical across
    processes. With aggregate_coeff > 0 the encoder becomes causal: the row
    for position i is its own token vector plus aggregate_coeff times the sum
    of all preceding non-special token vectors, which lets contrastive
    prompts imprint attribute words onto a later subject token the way CLIP
    does.

    subword_max_len splits longer words into fixed-size chunks so that one
    word can span several tokens; chunk vectors are seeded per chunk string.
    """

    encoder_id: str = "toy-ws16"
    embedding_dim: int = 16
    max_tokens: int = 77
    aggregate_coeff: float = 0.0
    subword_max_len: int | None = None
    _vector_cache: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    special_token_positions = (0, -1)

    def _token_vector(self, key: str) -> np.ndarray:
        vec = self._vector_cache.get(key)
        if vec is None:
            rng = np.random.default_rng(_stable_seed(self.encoder_id, key))
            raw = rng.standard_normal(self.embedding_dim)
            vec = raw / np.linalg.norm(raw)
            vec.setflags(write=False)
            self._vector_cache[key] = vec
        return vec

    def _pieces(self, text: str) -> list[tuple[int, int]]:
        """Char ranges of tokens: whitespace words, optionally chunked."""
        out = []
        for m in _WS_TOKEN_RE.finditer(text):
            start, end = m.start(), m.end()
            lim = self.subword_max_len
            if lim is not None and (end - start) > lim:
                for s in range(start, end, lim):
                    out.append((s, min(s + lim, end)))
            else:
                out.append((start, end))
        return out

    def encode(self, prompt: str) -> TokenizedPrompt:
        if not prompt or not prompt.strip():
            raise EmptyPrompt("prompt is empty")
        pieces = self._pieces(prompt)
        n = len(pieces) + 2
        if n > self.max_tokens:
            raise PromptTooLong(
                f"{n} tokens exceeds the encoder limit of {self.max_tokens}"
            )
        tokens = [Token(BOS_ID)]
        vectors = [self._token_vector("<|bos|>")]
        running = np.zeros(self.embedding_dim)
        rows = [vectors[0]]
        for idx, (start, end) in enumerate(pieces):
            piece = prompt[start:end].lower()
            tokens.append(Token(_WORD_ID_BASE + _stable_seed(piece) % (1 << 31), start, end))
            v = self._token_vector(piece)
            if self.aggregate_coeff:
                rows.append(v + self.aggregate_coeff * running)
                running = running + v
            else:
                rows.append(v)
        tokens.append(Token(EOS_ID))
        rows.append(self._token_vector("<|eos|>"))
        embeddings = np.array(rows, dtype=np.float64)
        special = np.zeros(n, dtype=bool)
        special[0] = special[-1] = True
        return TokenizedPrompt(
            text=prompt,
            tokens=tuple(tokens),
            embeddings=embeddings,
            encoder_id=self.encoder_id,
            special_mask=special,
        )

    def encode_unconditional(self) -> TokenizedPrompt:
        rows = np.array(
            [self._token_vector("<|bos|>"), self._token_vector("<|eos|>")],
            dtype=np.float64,
        )
        return TokenizedPrompt(
            text="",
            tokens=(Token(BOS_ID), Token(EOS_ID)),
            embeddings=rows,
            encoder_id=self.encoder_id,
            special_mask=np.array([True, True]),
        )


@dataclass
class StubTextEncoder(TextEncoder):
    """Metadata-only handle for a production encoder without loaded weights.

    Keeps dimension/limit metadata addressable (e.g. for validating persisted
    deltas) while raising AdapterUnavailable on any attempt to encode.
    """

    encoder_id: str
    embedding_dim: int
    max_tokens: int
    note: str = "model weights not loaded in this environment"

    special_token_positions = (0, -1)

    def encode(self, prompt: str) -> TokenizedPrompt:
        raise AdapterUnavailable(f"{self.encoder_id}: {self.note}")

    def encode_unconditional(self) -> TokenizedPrompt:
        raise AdapterUnavailable(f"{self.encoder_id}: {self.note}")


# ---------------------------------------------------------------------------
# Registry

_ENCODERS: dict[str, TextEncoder] = {}


def register_encoder(encoder: TextEncoder) -> TextEncoder:
    _ENCODERS[encoder.encoder_id] = encoder
    return encoder


def get_encoder(encoder_id: str) -> TextEncoder:
    try:
        return _ENCODERS[encoder_id]
    except KeyError:
        raise KeyError(
            f"unknown encoder {encoder_id!r}; known: {sorted(_ENCODERS)}"
        ) from None


def list_encoders() -> list[str]:
    return sorted(_ENCODERS)


def register_default_encoders() -> None:
    if "toy-ws16" in _ENCODERS:
        return
    register_encoder(ToyTextEncoder(encoder_id="toy-ws16"))
    register_encoder(ToyTextEncoder(encoder_id="toy-agg16", aggregate_coeff=0.5))
    register_encoder(
        ToyTextEncoder(
            encoder_id="toy-agg16-sub4", aggregate_coeff=0.5, subword_max_len=4
        )
    )
    # Concatenated dual-CLIP tokenwise space of an SDXL-class pipeline.
    register_encoder(
        StubTextEncoder(encoder_id="sdxl-clip-concat", embedding_dim=2048, max_tokens=77)
    )


register_default_encoders()
