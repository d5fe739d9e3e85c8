"""Applying attribute deltas at generation time.

Each application targets one subject occurrence in the prompt with one delta,
a scale, and an optional delay in sampler steps. Multiple applications
compose by summation on their token rows; the result is independent of
application order, bit for bit. The unconditional guidance branch is never
edited, and untouched token rows keep their exact baseline bits.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .diffusion import Backbone, Conditioning, SampleResult, SamplerConfig, sample
from .encoders import TextEncoder
from .errors import DelayExceedsSteps, DimensionMismatch, EncoderMismatch
from .extraction import AttributeDelta
from .prompts import SubjectSpan, TokenizedPrompt, locate_subject, locate_subject_all

ALL_OCCURRENCES = "all"


@dataclass(frozen=True)
class DeltaApplication:
    """One delta applied to one subject occurrence.

    occurrence is a zero-based index or "all". delay_steps holds the number
    of initial sampler steps that run on the unedited embedding before the
    delta switches on.
    """

    delta: AttributeDelta
    subject_word: str
    scale: float
    occurrence: int | str = 0
    delay_steps: int = 0

    def __post_init__(self):
        if not np.isfinite(self.scale):
            raise ValueError(f"scale must be finite, got {self.scale}")
        if isinstance(self.occurrence, str) and self.occurrence != ALL_OCCURRENCES:
            raise ValueError(f"occurrence must be an index or 'all'")
        if isinstance(self.occurrence, int) and self.occurrence < 0:
            raise ValueError("occurrence index must be >= 0")
        if self.delay_steps < 0:
            raise ValueError("delay_steps must be >= 0")


@dataclass(frozen=True)
class GenerationConfig:
    prompt: str
    seed: int = 0
    steps: int = 50
    guidance_weight: float = 7.5
    applications: tuple[DeltaApplication, ...] = ()

    def __post_init__(self):
        if isinstance(self.applications, list):
            object.__setattr__(self, "applications", tuple(self.applications))


def resolve_spans(tp: TokenizedPrompt, app: DeltaApplication) -> list[SubjectSpan]:
    if app.occurrence == ALL_OCCURRENCES:
        return locate_subject_all(tp, app.subject_word)
    return [locate_subject(tp, app.subject_word, app.occurrence)]


def _merge_key(app: DeltaApplication) -> tuple:
    occ = (
        (1, 0) if app.occurrence == ALL_OCCURRENCES else (0, app.occurrence)
    )
    return app.delta.identity_key() + (app.subject_word.lower(), occ)


def apply_deltas(
    tp: TokenizedPrompt,
    applications: Iterable[DeltaApplication],
) -> np.ndarray:
    """Edited copy of the embedding matrix with every application added.

    Applications of the same delta to the same occurrence are merged by
    summing scales first; the merged list is processed in a canonical
    content order. Together these make the result invariant, bit for bit,
    to the order applications are supplied in. Scale zero (including merged
    cancellation to zero) touches nothing.
    """
    merged: dict[tuple, tuple[DeltaApplication, float]] = {}
    for app in applications:
        if app.delta.encoder_id != tp.encoder_id:
            raise EncoderMismatch(
                f"delta for encoder {app.delta.encoder_id!r} applied to "
                f"embedding from {tp.encoder_id!r}"
            )
        if app.delta.dim != tp.embedding_dim:
            raise DimensionMismatch(
                f"delta dim {app.delta.dim} != embedding dim {tp.embedding_dim}"
            )
        key = _merge_key(app)
        if key in merged:
            prev, total = merged[key]
            merged[key] = (prev, total + app.scale)
        else:
            merged[key] = (app, app.scale)

    out = tp.embeddings.astype(np.float64).copy()
    for key in sorted(merged):
        app, scale = merged[key]
        if scale == 0.0:
            continue
        vec = app.delta.scaled(scale)
        for span in resolve_spans(tp, app):
            out[span.start : span.end] += vec
    return out


@dataclass
class GenerationResult:
    sample: np.ndarray
    provenance: dict
    trajectory: list[tuple[int, np.ndarray]] | None = None


StepHook = Callable[[int, np.ndarray, np.ndarray], None]


def _provenance(
    cfg: GenerationConfig, encoder: TextEncoder, backbone: Backbone
) -> dict:
    return {
        "prompt": cfg.prompt,
        "seed": cfg.seed,
        "steps": cfg.steps,
        "guidance_weight": cfg.guidance_weight,
        "encoder_id": encoder.encoder_id,
        "backbone_id": backbone.backbone_id,
        "applications": [
            {
                "attribute": app.delta.attribute_name,
                "method": app.delta.method,
                "config_digest": app.delta.config_digest,
                "subject_word": app.subject_word,
                "occurrence": app.occurrence,
                "scale": app.scale,
                "delay_steps": app.delay_steps,
            }
            for app in cfg.applications
        ],
    }


def generate_with_deltas(
    backbone: Backbone,
    encoder: TextEncoder,
    cfg: GenerationConfig,
    step_hook: StepHook | None = None,
    record_trajectory: bool = False,
) -> GenerationResult:
    """Sample under the prompt with deltas switched on per their delays.

    Subjects are resolved up front, so a bad application fails before any
    sampling. A delay equal to the step count is legal (the delta simply
    never fires); a larger delay warns. step_hook, when given, receives
    (step_index, baseline_embedding, edited_embedding) for every sampler
    step, the pairing that prompt-to-prompt style attention hooks consume.
    """
    tp = encoder.encode(cfg.prompt)
    for app in cfg.applications:
        resolve_spans(tp, app)
        if app.delay_steps > cfg.steps:
            warnings.warn(
                f"delay of {app.delay_steps} steps exceeds the {cfg.steps}-step "
                "schedule; the delta never applies",
                DelayExceedsSteps,
                stacklevel=2,
            )

    cache: dict[frozenset, np.ndarray] = {}

    def embedding_for(step: int) -> np.ndarray:
        active = frozenset(
            i for i, app in enumerate(cfg.applications) if app.delay_steps <= step
        )
        mat = cache.get(active)
        if mat is None:
            mat = apply_deltas(tp, [cfg.applications[i] for i in sorted(active)])
            cache[active] = mat
        return mat

    def provider(step: int) -> Conditioning:
        mat = embedding_for(step)
        if step_hook is not None:
            step_hook(step, tp.embeddings, mat)
        return Conditioning(mat, tp.special_mask)

    uncond_tp = encoder.encode_unconditional()
    result = sample(
        backbone,
        provider,
        SamplerConfig(
            steps=cfg.steps,
            guidance_weight=cfg.guidance_weight,
            seed=cfg.seed,
            record_trajectory=record_trajectory,
        ),
        uncond=Conditioning(uncond_tp.embeddings, uncond_tp.special_mask),
    )
    return GenerationResult(
        sample=result.final,
        provenance=_provenance(cfg, encoder, backbone),
        trajectory=result.trajectory,
    )


# ---------------------------------------------------------------------------
# Scale sweeps


@dataclass(frozen=True)
class SweepAxis:
    """One delta swept over a list of scales."""

    delta: AttributeDelta
    subject_word: str
    scales: tuple[float, ...]
    occurrence: int | str = 0
    delay_steps: int = 0

    def __post_init__(self):
        if isinstance(self.scales, list):
            object.__setattr__(self, "scales", tuple(self.scales))
        if not self.scales:
            raise ValueError("sweep axis needs at least one scale")

    def application(self, scale: float) -> DeltaApplication:
        return DeltaApplication(
            delta=self.delta,
            subject_word=self.subject_word,
            scale=scale,
            occurrence=self.occurrence,
            delay_steps=self.delay_steps,
        )


@dataclass
class SweepCell:
    scales: tuple[float, ...]
    result: GenerationResult
    unmodified: bool


@dataclass
class SweepResult:
    axes: tuple[SweepAxis, ...]
    cells: list[SweepCell]
    shape: tuple[int, ...]

    def cell(self, *idx: int) -> SweepCell:
        flat = 0
        for i, n in zip(idx, self.shape):
            flat = flat * n + i
        return self.cells[flat]


def sweep_grid(
    backbone: Backbone,
    encoder: TextEncoder,
    base: GenerationConfig,
    axes: tuple[SweepAxis, ...] | list[SweepAxis],
) -> SweepResult:
    """Generate the full cartesian grid over 1 or 2 sweep axes.

    All cells share the base seed and settings; only scales vary. Cells
    whose axis scales are all zero are flagged unmodified and carry exactly
    the base generation (given no extra base applications).
    """
    axes = tuple(axes)
    if not (1 <= len(axes) <= 2):
        raise ValueError("sweep supports 1 or 2 axes")
    shape = tuple(len(ax.scales) for ax in axes)
    cells: list[SweepCell] = []

    def run(scales: tuple[float, ...]):
        apps = base.applications + tuple(
            ax.application(s) for ax, s in zip(axes, scales)
        )
        cfg = GenerationConfig(
            prompt=base.prompt,
            seed=base.seed,
            steps=base.steps,
            guidance_weight=base.guidance_weight,
            applications=apps,
        )
        result = generate_with_deltas(backbone, encoder, cfg)
        result.provenance["sweep_scales"] = list(scales)
        cells.append(
            SweepCell(
                scales=scales,
                result=result,
                unmodified=all(s == 0.0 for s in scales) and not base.applications,
            )
        )

    if len(axes) == 1:
        for s in axes[0].scales:
            run((s,))
    else:
        for s1 in axes[0].scales:
            for s2 in axes[1].scales:
                run((s1, s2))
    return SweepResult(axes=axes, cells=cells, shape=shape)
