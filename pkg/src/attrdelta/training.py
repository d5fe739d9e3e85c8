"""Guidance-matching trainer for attribute deltas.

The trainer learns a single direction whose scaled application to the
subject token reproduces, for all scales at once, what prompt-space
classifier-free guidance between the positive and negative prompts would
produce. Concretely: sample a training anchor (a noisy state from a neutral
prompt), form the composed target

    target(alpha) = x0_neutral + alpha * (x0_plus - x0_minus)

from the backbone's three denoised estimates at that anchor, then regress the
prediction under the edited embedding (neutral + alpha * delta on the subject
span) onto it, with alpha drawn uniformly outside a dead zone around zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .diffusion import Backbone, Conditioning, SamplerConfig, add_noise, sample
from .encoders import TextEncoder
from .errors import NoValidPairs, ShapeMismatch
from .extraction import AttributeDelta, config_digest
from .optim import AdamW, cosine_lr_scale
from .prompts import (
    ContrastivePromptSet,
    ExpandedTriple,
    SubjectSpan,
    TokenizedPrompt,
    expand_prompt_set,
    locate_subject,
    warn_on_trailing_attributes,
)

ALPHA_RANGE = (-5.0, 5.0)
ALPHA_EXCLUSION = (-0.1, 0.1)


@dataclass(frozen=True)
class DeltaTrainConfig:
    """Trainer settings. Defaults are the production recipe.

    anchor_mode selects how anchors are made: "noise-injection" draws a clean
    sample from the neutral prompt and renoises it at a random timestep;
    "trajectory-truncation" stops a fresh sampling run at a random step and
    uses the intermediate state directly. anchor_seed_pool caps the number of
    distinct anchor seeds (None = unlimited fresh anchors). lr_decay "cosine"
    anneals the step size to zero, which trades the constant-rate default for
    tight convergence on small problems.
    """

    steps: int = 1000
    batch_size: int = 10
    learning_rate: float = 0.1
    betas: tuple[float, float] = (0.5, 0.8)
    weight_decay: float = 0.333
    alphas_per_item: int = 4
    alpha_range: tuple[float, float] = ALPHA_RANGE
    alpha_exclusion: tuple[float, float] = ALPHA_EXCLUSION
    seed: int = 0
    anchor_mode: str = "noise-injection"
    anchor_steps: int = 50
    anchor_guidance: float = 7.5
    anchor_seed_pool: int | None = None
    lr_decay: str = "none"
    fix_articles: bool = True

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1 or self.alphas_per_item < 1:
            raise ValueError("steps, batch_size, alphas_per_item must be positive")
        lo, hi = self.alpha_range
        elo, ehi = self.alpha_exclusion
        if not (lo < elo < 0.0 < ehi < hi):
            raise ValueError("alpha exclusion must be a proper interior zone around 0")
        if self.anchor_mode not in ("noise-injection", "trajectory-truncation"):
            raise ValueError(f"unknown anchor mode {self.anchor_mode!r}")
        if self.lr_decay not in ("none", "cosine"):
            raise ValueError(f"unknown lr decay {self.lr_decay!r}")

    def digest(self) -> str:
        return config_digest(
            {
                "method": "learned",
                "steps": self.steps,
                "batch_size": self.batch_size,
                "learning_rate": self.learning_rate,
                "betas": list(self.betas),
                "weight_decay": self.weight_decay,
                "alphas_per_item": self.alphas_per_item,
                "alpha_range": list(self.alpha_range),
                "alpha_exclusion": list(self.alpha_exclusion),
                "seed": self.seed,
                "anchor_mode": self.anchor_mode,
                "anchor_steps": self.anchor_steps,
                "anchor_guidance": self.anchor_guidance,
                "anchor_seed_pool": self.anchor_seed_pool,
                "lr_decay": self.lr_decay,
            }
        )


def sample_alphas(
    rng: np.random.Generator,
    n: int,
    alpha_range: tuple[float, float] = ALPHA_RANGE,
    exclusion: tuple[float, float] = ALPHA_EXCLUSION,
) -> np.ndarray:
    """Uniform draws from alpha_range with the open exclusion zone removed.

    Rejection sampling: a draw inside (exclusion[0], exclusion[1]) is
    redrawn. The exclusion endpoints themselves are admissible.
    """
    lo, hi = alpha_range
    elo, ehi = exclusion
    out = np.empty(n)
    filled = 0
    while filled < n:
        draw = rng.uniform(lo, hi, size=n - filled)
        keep = draw[(draw <= elo) | (draw >= ehi)]
        out[filled : filled + keep.size] = keep
        filled += keep.size
    return out


@dataclass
class TrainingAnchor:
    """One (x_t, t) state from a neutral prompt, with its prompt triple.

    Caches the three denoised estimates so repeated alpha draws against the
    same anchor cost nothing extra.
    """

    triple: ExpandedTriple
    tp_neutral: TokenizedPrompt
    tp_plus: TokenizedPrompt
    tp_minus: TokenizedPrompt
    span_neutral: SubjectSpan
    x_t: np.ndarray
    t: int
    seed: int
    x0_neutral_hat: np.ndarray | None = None
    x0_plus_hat: np.ndarray | None = None
    x0_minus_hat: np.ndarray | None = None

    def base_predictions(self, backbone: Backbone):
        if self.x0_neutral_hat is None:
            self.x0_neutral_hat = backbone.predict_x0(
                self.x_t, self.tp_neutral.embeddings, self.t, self.tp_neutral.special_mask
            )
            self.x0_plus_hat = backbone.predict_x0(
                self.x_t, self.tp_plus.embeddings, self.t, self.tp_plus.special_mask
            )
            self.x0_minus_hat = backbone.predict_x0(
                self.x_t, self.tp_minus.embeddings, self.t, self.tp_minus.special_mask
            )
        return self.x0_neutral_hat, self.x0_plus_hat, self.x0_minus_hat


def make_anchor(
    backbone: Backbone,
    encoder: TextEncoder,
    triple: ExpandedTriple,
    seed: int,
    mode: str = "noise-injection",
    steps: int = 50,
    guidance: float = 7.5,
) -> TrainingAnchor:
    """Build a training anchor from the triple's neutral prompt.

    noise-injection: sample a clean x0 with the neutral prompt, then apply
    the forward process at a uniform random timestep. trajectory-truncation:
    run the sampler with the neutral prompt, stop at a uniformly random grid
    step, and take that intermediate state at its timestep.
    """
    rng = np.random.default_rng(seed)
    image_seed = int(rng.integers(1 << 62))
    tp_neutral = encoder.encode(triple.prompt_neutral)
    tp_plus = encoder.encode(triple.prompt_plus)
    tp_minus = encoder.encode(triple.prompt_minus)
    span = locate_subject(tp_neutral, triple.subject_word)
    cond = Conditioning(tp_neutral.embeddings, tp_neutral.special_mask)
    uncond = Conditioning(
        encoder.encode_unconditional().embeddings,
        encoder.encode_unconditional().special_mask,
    )
    if mode == "noise-injection":
        result = sample(
            backbone,
            cond,
            SamplerConfig(steps=steps, guidance_weight=guidance, seed=image_seed),
            uncond=uncond,
        )
        t = int(rng.integers(1, backbone.schedule.num_train_steps + 1))
        eps = rng.standard_normal(backbone.image_shape)
        x_t = add_noise(backbone, result.final, eps, t)
    elif mode == "trajectory-truncation":
        result = sample(
            backbone,
            cond,
            SamplerConfig(
                steps=steps,
                guidance_weight=guidance,
                seed=image_seed,
                record_trajectory=True,
            ),
            uncond=uncond,
        )
        idx = int(rng.integers(len(result.trajectory)))
        t, x_t = result.trajectory[idx]
        x_t = x_t.copy()
    else:
        raise ValueError(f"unknown anchor mode {mode!r}")
    return TrainingAnchor(
        triple=triple,
        tp_neutral=tp_neutral,
        tp_plus=tp_plus,
        tp_minus=tp_minus,
        span_neutral=span,
        x_t=x_t,
        t=t,
        seed=seed,
    )


def compose_target(
    x0_neutral: np.ndarray,
    x0_plus: np.ndarray,
    x0_minus: np.ndarray,
    alpha: float,
) -> np.ndarray:
    """Guidance-composed regression target x0_neutral + alpha*(plus - minus)."""
    if not (x0_neutral.shape == x0_plus.shape == x0_minus.shape):
        raise ShapeMismatch("prediction shapes differ")
    return x0_neutral + alpha * (x0_plus - x0_minus)


def apply_to_span(
    embedding: np.ndarray, span: SubjectSpan, vector: np.ndarray, scale: float
) -> np.ndarray:
    """Copy of `embedding` with scale*vector added to the span rows.

    Scale exactly zero returns an unmodified copy, bit for bit.
    """
    out = embedding.astype(np.float64).copy()
    if scale != 0.0:
        out[span.start : span.end] += scale * vector
    return out


def delta_loss_and_grad(
    backbone: Backbone,
    anchor: TrainingAnchor,
    delta: np.ndarray,
    alpha: float,
) -> tuple[float, np.ndarray]:
    """Weighted squared error against the composed target, and d(loss)/d(delta).

    The three base predictions share the anchor's (x_t, t); only the neutral
    prompt's embedding is edited.
    """
    x0_a, x0_p, x0_m = anchor.base_predictions(backbone)
    target = compose_target(x0_a, x0_p, x0_m, alpha)
    span = anchor.span_neutral
    edited = apply_to_span(anchor.tp_neutral.embeddings, span, delta, alpha)
    pred = backbone.predict_x0(
        anchor.x_t, edited, anchor.t, anchor.tp_neutral.special_mask
    )
    w = backbone.schedule.weight(anchor.t)
    residual = pred - target
    loss = w * float(residual @ residual)
    cot = (2.0 * w) * residual
    grad_rows = backbone.embedding_vjp(
        anchor.x_t, edited, anchor.t, cot, anchor.tp_neutral.special_mask
    )
    grad = alpha * grad_rows[span.start : span.end].sum(axis=0)
    return loss, grad


@dataclass
class TrainLogEntry:
    step: int
    loss: float
    delta_norm: float


def train_attribute_delta(
    backbone: Backbone,
    encoder: TextEncoder,
    pset: ContrastivePromptSet,
    config: DeltaTrainConfig = DeltaTrainConfig(),
    log_fn: Callable[[TrainLogEntry], None] | None = None,
) -> AttributeDelta:
    """Learn one attribute delta from a contrastive prompt set.

    Deterministic given (backbone, encoder, prompt set, config): every random
    choice flows from config.seed. Each step draws batch_size (pair, anchor)
    items and alphas_per_item scales per item; the delta takes one AdamW step
    on the mean gradient. The delta starts at zero, so a degenerate prompt
    set with identical positive and negative phrases stays at exactly zero.
    """
    warn_on_trailing_attributes(pset)
    triples = expand_prompt_set(pset, fix_articles=config.fix_articles)
    usable: list[ExpandedTriple] = []
    for tr in triples:
        try:
            tp = encoder.encode(tr.prompt_neutral)
            locate_subject(tp, tr.subject_word)
            locate_subject(encoder.encode(tr.prompt_plus), tr.subject_word)
            locate_subject(encoder.encode(tr.prompt_minus), tr.subject_word)
        except Exception:
            continue
        usable.append(tr)
    if not usable:
        raise NoValidPairs(f"no trainable pairs in prompt set {pset.attribute_name!r}")

    rng = np.random.default_rng(config.seed)
    pool: list[int] | None = None
    if config.anchor_seed_pool is not None:
        pool = [int(s) for s in rng.integers(1 << 62, size=config.anchor_seed_pool)]
    dim = encoder.embedding_dim
    delta = np.zeros(dim, dtype=np.float64)
    opt = AdamW(
        learning_rate=config.learning_rate,
        betas=config.betas,
        weight_decay=config.weight_decay,
    )
    anchor_cache: dict[tuple[int, int], TrainingAnchor] = {}

    for step in range(1, config.steps + 1):
        grad_acc = np.zeros(dim)
        loss_acc = 0.0
        n_terms = 0
        for _ in range(config.batch_size):
            tri_idx = int(rng.integers(len(usable)))
            if pool is not None:
                anchor_seed = pool[int(rng.integers(len(pool)))]
            else:
                anchor_seed = int(rng.integers(1 << 62))
            key = (tri_idx, anchor_seed)
            anchor = anchor_cache.get(key)
            if anchor is None:
                anchor = make_anchor(
                    backbone,
                    encoder,
                    usable[tri_idx],
                    anchor_seed,
                    mode=config.anchor_mode,
                    steps=config.anchor_steps,
                    guidance=config.anchor_guidance,
                )
                anchor_cache[key] = anchor
            alphas = sample_alphas(
                rng, config.alphas_per_item, config.alpha_range, config.alpha_exclusion
            )
            for alpha in alphas:
                loss, grad = delta_loss_and_grad(backbone, anchor, delta, float(alpha))
                loss_acc += loss
                grad_acc += grad
                n_terms += 1
        lr_scale = (
            cosine_lr_scale(step, config.steps) if config.lr_decay == "cosine" else 1.0
        )
        delta = opt.step(delta, grad_acc / n_terms, lr_scale=lr_scale)
        if log_fn is not None:
            log_fn(
                TrainLogEntry(
                    step=step,
                    loss=loss_acc / n_terms,
                    delta_norm=float(np.linalg.norm(delta)),
                )
            )

    return AttributeDelta(
        attribute_name=pset.attribute_name,
        vector=delta.astype(np.float32),
        encoder_id=encoder.encoder_id,
        method="learned",
        training_nouns=tuple(pset.subject_nouns),
        config_digest=config.digest(),
    )
