"""Attribute expression and image-change metrics, and the sweep protocol.

The central metric is directional text alignment: how much closer an image
sits to the positive pole prompt than to the negative pole prompt in an
image-text embedding space,

    score_bi(I) = cos(E_img(I), E_txt(prompt_plus))
               - cos(E_img(I), E_txt(prompt_minus)),

reported relative to an unedited reference image of the same seed. Image
change is tracked with a perceptual distance and a global embedding
similarity; identity preservation optionally with a face-matching adapter.
All metrics run behind small adapter handles so production scorers
(CLIP-family, perceptual nets, face matchers) can replace the deterministic
toy ones without touching the protocol.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from statistics import mean, pstdev
from typing import Protocol

import numpy as np

from .diffusion import Backbone
from .encoders import TextEncoder
from .engine import DeltaApplication, GenerationConfig, generate_with_deltas
from .errors import EmptyPrompt
from .extraction import AttributeDelta
from .prompts import fix_articles_text

MODES = ("normal", "delayed")


# ---------------------------------------------------------------------------
# Metric adapters


class ImageTextScorer(Protocol):
    def image_embedding(self, image: np.ndarray) -> np.ndarray: ...

    def text_embedding(self, prompt: str) -> np.ndarray: ...


class PerceptualMetric(Protocol):
    def change(self, image: np.ndarray, reference: np.ndarray) -> float: ...


class GlobalImageEmbedder(Protocol):
    def similarity(self, image: np.ndarray, reference: np.ndarray) -> float: ...


class FaceReId(Protocol):
    def similarity(self, image: np.ndarray, reference: np.ndarray) -> float | None: ...


@dataclass
class MetricAdapters:
    scorer: ImageTextScorer
    perceptual: PerceptualMetric
    global_embedder: GlobalImageEmbedder
    face_reid: FaceReId | None = None


def _unit(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).ravel()
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("zero vector has no direction")
    return v / n


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(_unit(a) @ _unit(b))


@dataclass
class ToyImageTextScorer:
    """Shared-space scorer for the toy stack.

    Text maps through the encoder and the backbone's linear head, so a
    prompt and the image it generates (at guidance 1) land on the same ray.
    Images are the backbone's sample vectors.
    """

    backbone: Backbone
    encoder: TextEncoder

    def image_embedding(self, image: np.ndarray) -> np.ndarray:
        return _unit(np.asarray(image, dtype=np.float64))

    def text_embedding(self, prompt: str) -> np.ndarray:
        tp = self.encoder.encode(prompt)
        pooled = tp.embeddings[~tp.special_mask].mean(axis=0)
        return _unit(self.backbone.W @ pooled)


@dataclass
class MeanAbsPerceptual:
    """Mean absolute difference; exactly 0.0 for identical inputs."""

    def change(self, image: np.ndarray, reference: np.ndarray) -> float:
        a = np.asarray(image, dtype=np.float64)
        b = np.asarray(reference, dtype=np.float64)
        return float(np.mean(np.abs(a - b)))


@dataclass
class ProjectionGlobalEmbedder:
    """Cosine similarity after a fixed random projection.

    Bit-identical inputs return exactly 1.0.
    """

    out_dim: int = 4
    seed: int = 11
    _proj: dict = field(default_factory=dict, repr=False)

    def _matrix(self, in_dim: int) -> np.ndarray:
        mat = self._proj.get(in_dim)
        if mat is None:
            rng = np.random.default_rng(self.seed + in_dim)
            mat = rng.standard_normal((self.out_dim, in_dim))
            self._proj[in_dim] = mat
        return mat

    def similarity(self, image: np.ndarray, reference: np.ndarray) -> float:
        a = np.asarray(image, dtype=np.float64).ravel()
        b = np.asarray(reference, dtype=np.float64).ravel()
        if a.shape == b.shape and np.array_equal(a, b):
            return 1.0
        mat = self._matrix(a.size)
        return cosine(mat @ a, mat @ b)


@dataclass
class NoFaceReId:
    """Face matcher stub: toy images carry no faces, so always undetected."""

    def similarity(self, image: np.ndarray, reference: np.ndarray) -> float | None:
        return None


def toy_adapters(backbone: Backbone, encoder: TextEncoder) -> MetricAdapters:
    return MetricAdapters(
        scorer=ToyImageTextScorer(backbone, encoder),
        perceptual=MeanAbsPerceptual(),
        global_embedder=ProjectionGlobalEmbedder(),
        face_reid=None,
    )


# ---------------------------------------------------------------------------
# Core metrics


def directional_score(
    adapters: MetricAdapters,
    image: np.ndarray,
    prompt_plus: str,
    prompt_minus: str,
) -> float:
    """cos(image, plus pole) - cos(image, minus pole)."""
    if not prompt_plus.strip() or not prompt_minus.strip():
        raise EmptyPrompt("pole prompts must be non-empty")
    img = adapters.scorer.image_embedding(image)
    plus = adapters.scorer.text_embedding(prompt_plus)
    minus = adapters.scorer.text_embedding(prompt_minus)
    return cosine(img, plus) - cosine(img, minus)


def directional_score_vs_reference(
    adapters: MetricAdapters,
    image: np.ndarray,
    reference: np.ndarray,
    prompt_plus: str,
    prompt_minus: str,
) -> float:
    """Directional score of the image minus that of its reference.

    An image bit-identical to its reference scores exactly 0.0.
    """
    s_img = directional_score(adapters, image, prompt_plus, prompt_minus)
    s_ref = directional_score(adapters, reference, prompt_plus, prompt_minus)
    return s_img - s_ref


def image_change(
    adapters: MetricAdapters, image: np.ndarray, reference: np.ndarray
) -> dict[str, float]:
    return {
        "perceptual_change": float(adapters.perceptual.change(image, reference)),
        "global_similarity": float(
            adapters.global_embedder.similarity(image, reference)
        ),
    }


# ---------------------------------------------------------------------------
# Sweep protocol


@dataclass(frozen=True)
class EvalProtocol:
    """Grid specification for evaluating one attribute delta.

    Pole templates contain a {noun} slot and phrase the attribute's two
    extremes; they feed the directional score. "delayed" mode switches the
    delta on only after delayed_steps sampler steps.
    """

    nouns: tuple[str, ...]
    seeds: tuple[int, ...]
    scales: tuple[float, ...] = (-2.0, -1.0, 0.0, 1.0, 2.0)
    prompt_template: str = "a photo of a {noun}"
    pole_plus_template: str = ""
    pole_minus_template: str = ""
    modes: tuple[str, ...] = ("normal",)
    delayed_steps: int = 10
    steps: int = 50
    guidance_weight: float = 7.5
    occurrence: int | str = 0
    fix_articles: bool = True

    def __post_init__(self):
        if not self.nouns or not self.seeds:
            raise ValueError("protocol needs nouns and seeds")
        if 0.0 not in self.scales:
            raise ValueError("scale grid must include 0 (the reference point)")
        bad = set(self.modes) - set(MODES)
        if bad:
            raise ValueError(f"unknown modes {sorted(bad)}")
        if not self.pole_plus_template or not self.pole_minus_template:
            raise ValueError("pole templates are required")

    def render(self, template: str, noun: str) -> str:
        text = template.format(noun=noun)
        return fix_articles_text(text) if self.fix_articles else text


@dataclass
class EvalRow:
    noun: str
    seed: int
    scale: float
    mode: str
    clip_bi: float
    delta_clip_bi: float
    perceptual_change: float
    global_similarity: float
    face_reid: float | None = None


CSV_COLUMNS = (
    "noun",
    "seed",
    "scale",
    "mode",
    "clip_bi",
    "delta_clip_bi",
    "perceptual_change",
    "global_similarity",
    "face_reid",
)


def evaluate_delta(
    backbone: Backbone,
    encoder: TextEncoder,
    adapters: MetricAdapters,
    delta: AttributeDelta,
    protocol: EvalProtocol,
) -> list[EvalRow]:
    """Run the sweep grid and score every cell against its seed's reference.

    The reference for (noun, seed) is the unedited generation; the scale-0
    normal-mode cell is that reference itself, so its relative directional
    score, and its perceptual change, are exactly zero.
    """
    rows: list[EvalRow] = []
    for noun in protocol.nouns:
        prompt = protocol.render(protocol.prompt_template, noun)
        pole_plus = protocol.render(protocol.pole_plus_template, noun)
        pole_minus = protocol.render(protocol.pole_minus_template, noun)
        for seed in protocol.seeds:
            base = GenerationConfig(
                prompt=prompt,
                seed=seed,
                steps=protocol.steps,
                guidance_weight=protocol.guidance_weight,
            )
            reference = generate_with_deltas(backbone, encoder, base).sample
            ref_score = directional_score(adapters, reference, pole_plus, pole_minus)
            for mode in protocol.modes:
                delay = protocol.delayed_steps if mode == "delayed" else 0
                for scale in protocol.scales:
                    if scale == 0.0 and mode == "normal":
                        image = reference
                    else:
                        cfg = GenerationConfig(
                            prompt=prompt,
                            seed=seed,
                            steps=protocol.steps,
                            guidance_weight=protocol.guidance_weight,
                            applications=(
                                DeltaApplication(
                                    delta=delta,
                                    subject_word=noun,
                                    scale=scale,
                                    occurrence=protocol.occurrence,
                                    delay_steps=delay,
                                ),
                            ),
                        )
                        image = generate_with_deltas(backbone, encoder, cfg).sample
                    score = directional_score(adapters, image, pole_plus, pole_minus)
                    change = image_change(adapters, image, reference)
                    reid = None
                    if adapters.face_reid is not None:
                        reid = adapters.face_reid.similarity(image, reference)
                    rows.append(
                        EvalRow(
                            noun=noun,
                            seed=seed,
                            scale=scale,
                            mode=mode,
                            clip_bi=score,
                            delta_clip_bi=score - ref_score,
                            perceptual_change=change["perceptual_change"],
                            global_similarity=change["global_similarity"],
                            face_reid=reid,
                        )
                    )
    return rows


def write_rows_csv(rows: list[EvalRow], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in rows:
            writer.writerow(
                [
                    r.noun,
                    r.seed,
                    repr(r.scale),
                    r.mode,
                    repr(r.clip_bi),
                    repr(r.delta_clip_bi),
                    repr(r.perceptual_change),
                    repr(r.global_similarity),
                    "" if r.face_reid is None else repr(r.face_reid),
                ]
            )


def read_rows_csv(path: str | Path) -> list[EvalRow]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            rows.append(
                EvalRow(
                    noun=rec["noun"],
                    seed=int(rec["seed"]),
                    scale=float(rec["scale"]),
                    mode=rec["mode"],
                    clip_bi=float(rec["clip_bi"]),
                    delta_clip_bi=float(rec["delta_clip_bi"]),
                    perceptual_change=float(rec["perceptual_change"]),
                    global_similarity=float(rec["global_similarity"]),
                    face_reid=(
                        float(rec["face_reid"]) if rec["face_reid"] else None
                    ),
                )
            )
    return rows


def aggregate_rows(rows: list[EvalRow]) -> list[dict]:
    """Mean and population-std of each metric per (mode, scale) cell."""
    cells: dict[tuple[str, float], list[EvalRow]] = {}
    for r in rows:
        cells.setdefault((r.mode, r.scale), []).append(r)
    out = []
    for (mode, scale) in sorted(cells):
        group = cells[(mode, scale)]
        entry = {"mode": mode, "scale": scale, "n": len(group)}
        for metric in ("clip_bi", "delta_clip_bi", "perceptual_change", "global_similarity"):
            vals = [getattr(r, metric) for r in group]
            entry[f"{metric}_mean"] = mean(vals)
            entry[f"{metric}_std"] = pstdev(vals) if len(vals) > 1 else 0.0
        reid = [r.face_reid for r in group if r.face_reid is not None]
        entry["face_reid_mean"] = mean(reid) if reid else None
        entry["face_reid_n"] = len(reid)
        out.append(entry)
    return out


def plot_sweep(rows: list[EvalRow], path: str | Path, title: str = "") -> None:
    """Two-panel summary chart: dose response and expression vs change."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    agg = aggregate_rows(rows)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    for mode in sorted({a["mode"] for a in agg}):
        pts = [a for a in agg if a["mode"] == mode]
        xs = [a["scale"] for a in pts]
        ys = [a["delta_clip_bi_mean"] for a in pts]
        es = [a["delta_clip_bi_std"] for a in pts]
        ax1.errorbar(xs, ys, yerr=es, marker="o", capsize=3, label=mode)
    ax1.set_xlabel("scale")
    ax1.set_ylabel("directional score vs reference")
    ax1.axhline(0.0, color="gray", lw=0.5)
    ax1.axvline(0.0, color="gray", lw=0.5)
    ax1.legend()

    for mode in sorted({r.mode for r in rows}):
        pts = [r for r in rows if r.mode == mode]
        ax2.scatter(
            [r.delta_clip_bi for r in pts],
            [r.perceptual_change for r in pts],
            s=12,
            alpha=0.6,
            label=mode,
        )
    ax2.set_xlabel("directional score vs reference")
    ax2.set_ylabel("perceptual change vs reference")
    ax2.legend()
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
