"""Pair inversion: recover an embedding-space offset that explains one image.

Given an image pair that differs in one attribute and a caption for it, learn
a full tokenwise offset matrix such that the caption embedding plus the
offset reconstructs the target image through the frozen backbone. Special
token rows (BOS/EOS) are never optimized and stay exactly zero. Masking the
matrix down to the subject span afterward, or collapsing the span rows to a
single direction, yields an editable attribute delta.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .diffusion import Backbone, add_noise
from .encoders import TextEncoder
from .errors import DimensionMismatch, EncoderMismatch, ShapeMismatch, SpanOutOfRange
from .extraction import AttributeDelta, config_digest
from .optim import AdamW, cosine_lr_scale
from .prompts import SubjectSpan, TokenizedPrompt


@dataclass(frozen=True)
class PairInversionConfig:
    steps: int = 75
    batch_size: int = 1
    learning_rate: float = 0.1
    betas: tuple[float, float] = (0.5, 0.8)
    weight_decay: float = 0.333
    seed: int = 0
    lr_decay: str = "none"

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be positive")
        if self.lr_decay not in ("none", "cosine"):
            raise ValueError(f"unknown lr decay {self.lr_decay!r}")

    def digest(self) -> str:
        return config_digest(
            {
                "method": "pair_inversion",
                "steps": self.steps,
                "batch_size": self.batch_size,
                "learning_rate": self.learning_rate,
                "betas": list(self.betas),
                "weight_decay": self.weight_decay,
                "seed": self.seed,
                "lr_decay": self.lr_decay,
            }
        )


@dataclass(frozen=True)
class PairInversionDelta:
    """Tokenwise offset matrix tied to one caption and encoder.

    Rows where optimized_mask is False are exactly zero by construction.
    """

    matrix: np.ndarray  # (N, d) float64
    caption: str
    encoder_id: str
    optimized_mask: np.ndarray  # (N,) bool
    config_digest: str = ""

    def __post_init__(self):
        if self.matrix.ndim != 2:
            raise ShapeMismatch("offset matrix must be (tokens, dim)")
        if self.optimized_mask.shape != (self.matrix.shape[0],):
            raise ShapeMismatch("optimized mask length != token count")
        self.matrix.setflags(write=False)
        self.optimized_mask.setflags(write=False)

    @property
    def n_tokens(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def reconstruction_loss_and_grad(
    backbone: Backbone,
    tp: TokenizedPrompt,
    matrix: np.ndarray,
    image: np.ndarray,
    t: int,
    eps: np.ndarray,
) -> tuple[float, np.ndarray]:
    """One-draw reconstruction objective and its matrix gradient.

    Noise the target image to timestep t, denoise it under the offset
    caption embedding, and score the weighted squared error against the
    clean image. Gradient rows for special tokens are zeroed.
    """
    x_t = add_noise(backbone, image, eps, t)
    edited = tp.embeddings.astype(np.float64) + matrix
    pred = backbone.predict_x0(x_t, edited, t, tp.special_mask)
    w = backbone.schedule.weight(t)
    residual = pred - image
    loss = w * float(residual @ residual)
    grad = backbone.embedding_vjp(x_t, edited, t, (2.0 * w) * residual, tp.special_mask)
    grad[tp.special_mask] = 0.0
    return loss, grad


@dataclass
class InversionLogEntry:
    step: int
    loss: float


def learn_pair_delta(
    backbone: Backbone,
    encoder: TextEncoder,
    image: np.ndarray,
    caption: str,
    config: PairInversionConfig = PairInversionConfig(),
    log_fn=None,
) -> PairInversionDelta:
    """Optimize a tokenwise offset so the caption reconstructs the image.

    Each step draws batch_size fresh (timestep, noise) pairs, accumulates
    the mean gradient, and takes one AdamW step. Special rows receive no
    gradient and no decay, so they remain exactly zero.
    """
    if image.shape != backbone.image_shape:
        raise ShapeMismatch(
            f"image shape {image.shape} != backbone shape {backbone.image_shape}"
        )
    tp = encoder.encode(caption)
    if encoder.encoder_id not in backbone.supported_encoders:
        raise EncoderMismatch(
            f"backbone {backbone.backbone_id} does not accept encoder "
            f"{encoder.encoder_id}"
        )
    rng = np.random.default_rng(config.seed)
    matrix = np.zeros((tp.n_tokens, tp.embedding_dim), dtype=np.float64)
    opt = AdamW(
        learning_rate=config.learning_rate,
        betas=config.betas,
        weight_decay=config.weight_decay,
    )
    optimized = ~tp.special_mask
    for step in range(1, config.steps + 1):
        grad_acc = np.zeros_like(matrix)
        loss_acc = 0.0
        for _ in range(config.batch_size):
            t = int(rng.integers(1, backbone.schedule.num_train_steps + 1))
            eps = rng.standard_normal(backbone.image_shape)
            loss, grad = reconstruction_loss_and_grad(
                backbone, tp, matrix, image, t, eps
            )
            loss_acc += loss
            grad_acc += grad
        lr_scale = (
            cosine_lr_scale(step, config.steps) if config.lr_decay == "cosine" else 1.0
        )
        matrix = opt.step(matrix, grad_acc / config.batch_size, lr_scale=lr_scale)
        matrix[tp.special_mask] = 0.0  # decay-proof: special rows stay exact zeros
        if log_fn is not None:
            log_fn(InversionLogEntry(step=step, loss=loss_acc / config.batch_size))
    return PairInversionDelta(
        matrix=matrix,
        caption=caption,
        encoder_id=encoder.encoder_id,
        optimized_mask=optimized,
        config_digest=config.digest(),
    )


def mask_to_subject(delta: PairInversionDelta, span: SubjectSpan) -> PairInversionDelta:
    """Zero every row outside the subject span. Idempotent."""
    if span.end > delta.n_tokens:
        raise SpanOutOfRange(
            f"span [{span.start}, {span.end}) exceeds {delta.n_tokens} tokens"
        )
    keep = np.zeros(delta.n_tokens, dtype=bool)
    keep[span.start : span.end] = True
    matrix = delta.matrix.copy()
    matrix[~keep] = 0.0
    return replace(delta, matrix=matrix)


def interpolate_application(
    tp: TokenizedPrompt, delta: PairInversionDelta, scale: float
) -> np.ndarray:
    """Caption embedding plus scale times the offset matrix.

    Scale zero returns a bit-identical copy of the embedding.
    """
    if tp.encoder_id != delta.encoder_id:
        raise EncoderMismatch(
            f"embedding from {tp.encoder_id!r}, offset from {delta.encoder_id!r}"
        )
    if tp.n_tokens != delta.n_tokens or tp.embedding_dim != delta.dim:
        raise ShapeMismatch("embedding and offset matrix shapes differ")
    out = tp.embeddings.astype(np.float64).copy()
    if scale != 0.0:
        out += scale * delta.matrix
    return out


def subject_rows_to_attribute_delta(
    delta: PairInversionDelta,
    span: SubjectSpan,
    attribute_name: str,
) -> AttributeDelta:
    """Collapse the span rows to one direction reusable on other prompts."""
    if span.end > delta.n_tokens:
        raise SpanOutOfRange(
            f"span [{span.start}, {span.end}) exceeds {delta.n_tokens} tokens"
        )
    vector = delta.matrix[span.start : span.end].mean(axis=0)
    return AttributeDelta(
        attribute_name=attribute_name,
        vector=vector.astype(np.float32),
        encoder_id=delta.encoder_id,
        method="pair_inversion_masked",
        training_nouns=(span.word,),
        config_digest=delta.config_digest,
    )
