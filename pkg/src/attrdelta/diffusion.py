"""Denoising backbone interface, noise schedule, and DDIM sampling.

The backbone is an x0-predictor: given a noisy state x_t, a tokenwise text
embedding, and a timestep it returns a denoised estimate. The toy backbone is
linear (W times the mean of the non-special embedding rows), which makes
optimization problems over embeddings solvable in closed form and keeps every
acceptance check independent of GPU weights. Real U-Net/DiT backbones plug in
behind the same handle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import (
    AdapterUnavailable,
    DimensionMismatch,
    ShapeMismatch,
    TimestepOutOfRange,
)

# ---------------------------------------------------------------------------
# Noise schedule


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance-preserving schedule x_t = alpha_t x_0 + sigma_t eps.

    Arrays are indexed by timestep t in [1, num_train_steps]; index 0 is a
    placeholder. loss_weight holds the per-timestep weight w(t) used by all
    training objectives (uniform by default).
    """

    num_train_steps: int
    alpha: np.ndarray
    sigma: np.ndarray
    loss_weight: np.ndarray

    def __post_init__(self):
        t = self.num_train_steps
        for name in ("alpha", "sigma", "loss_weight"):
            arr = getattr(self, name)
            if arr.shape != (t + 1,):
                raise ShapeMismatch(f"{name} must have shape ({t + 1},)")
        if np.any(self.loss_weight[1:] <= 0):
            raise ValueError("loss weights must be positive")

    def check_t(self, t: int) -> int:
        t = int(t)
        if not (1 <= t <= self.num_train_steps):
            raise TimestepOutOfRange(
                f"t={t} outside [1, {self.num_train_steps}]"
            )
        return t

    def coeffs(self, t: int) -> tuple[float, float]:
        t = self.check_t(t)
        return float(self.alpha[t]), float(self.sigma[t])

    def weight(self, t: int) -> float:
        return float(self.loss_weight[self.check_t(t)])


def cosine_vp_schedule(num_train_steps: int = 1000) -> NoiseSchedule:
    """Cosine schedule hitting alpha=1,sigma=0 at t=1 and alpha=0,sigma=1 at t=T."""
    t = np.arange(num_train_steps + 1, dtype=np.float64)
    grid = (t - 1.0) / (num_train_steps - 1.0)
    alpha = np.cos(0.5 * np.pi * grid)
    sigma = np.sin(0.5 * np.pi * grid)
    alpha[0] = sigma[0] = np.nan  # index 0 unused
    alpha[1], sigma[1] = 1.0, 0.0
    alpha[-1], sigma[-1] = 0.0, 1.0
    return NoiseSchedule(
        num_train_steps=num_train_steps,
        alpha=alpha,
        sigma=sigma,
        loss_weight=np.ones(num_train_steps + 1),
    )


# ---------------------------------------------------------------------------
# Backbones


class Backbone:
    """x0-prediction interface.

    Attributes
    ----------
    backbone_id : str
    image_shape : tuple[int, ...]
        Shape of x_t / x_0 arrays.
    schedule : NoiseSchedule
    supported_encoders : tuple[str, ...]
        Encoder ids whose embedding matrices this backbone accepts.
    """

    backbone_id: str
    image_shape: tuple[int, ...]
    schedule: NoiseSchedule
    supported_encoders: tuple[str, ...]

    def predict_x0(
        self,
        x_t: np.ndarray,
        embedding: np.ndarray,
        t: int,
        special_mask: np.ndarray | None = None,
    ) -> np.ndarray:
        raise NotImplementedError

    def embedding_vjp(
        self,
        x_t: np.ndarray,
        embedding: np.ndarray,
        t: int,
        cotangent: np.ndarray,
        special_mask: np.ndarray | None = None,
    ) -> np.ndarray:
        """d/d(embedding) of <cotangent, predict_x0>; shape (N, d).

        Backbones without analytic gradients may raise AdapterUnavailable;
        callers then fall back to finite differences.
        """
        raise AdapterUnavailable(f"{self.backbone_id} has no embedding gradient")

    def _check_inputs(self, x_t: np.ndarray, embedding: np.ndarray, t: int) -> int:
        if x_t.shape != self.image_shape:
            raise ShapeMismatch(
                f"x_t shape {x_t.shape} != image shape {self.image_shape}"
            )
        if embedding.ndim != 2:
            raise ShapeMismatch("embedding must be a (tokens, dim) matrix")
        return self.schedule.check_t(t)


def _content_rows(
    embedding: np.ndarray, special_mask: np.ndarray | None
) -> np.ndarray:
    if special_mask is None:
        return embedding
    if special_mask.shape[0] != embedding.shape[0]:
        raise ShapeMismatch("special mask length != token count")
    return embedding[~special_mask]


@dataclass
class ToyLinearBackbone(Backbone):
    """Linear toy: predict_x0 = W @ mean(non-special embedding rows).

    W is a seeded orthogonal matrix: square, full rank, condition number 1.
    That keeps the least-squares problem behind delta training uniquely
    solvable and isotropic, so optimizer fixed points coincide with the
    algebraic optimum to high precision. With zero state_coupling the
    prediction ignores x_t entirely and an all-special (or empty-mask)
    embedding predicts exactly zero, making the unconditional guidance
    branch the zero prediction.

    state_coupling adds that fraction of x_t to the prediction. The term is
    additive and embedding-independent, so it cancels between the trainer's
    target and prediction (both see the same anchor state) and leaves the
    embedding gradient untouched, but it threads the initial noise through
    to the final sample, giving visibly seed-dependent generations.
    """

    backbone_id: str = "toy-linear16"
    embedding_dim: int = 16
    image_dim: int = 16
    weight_seed: int = 7
    state_coupling: float = 0.0
    schedule: NoiseSchedule = field(default_factory=cosine_vp_schedule)
    supported_encoders: tuple[str, ...] = ("toy-ws16", "toy-agg16", "toy-agg16-sub4")

    def __post_init__(self):
        if self.image_dim != self.embedding_dim:
            raise DimensionMismatch("toy backbone weight must be square")
        self.image_shape = (self.image_dim,)
        rng = np.random.default_rng(self.weight_seed)
        raw = rng.standard_normal((self.image_dim, self.embedding_dim))
        q, r = np.linalg.qr(raw)
        self.W = q * np.sign(np.diag(r))  # canonical sign choice
        self.W.setflags(write=False)

    def _pooled(self, embedding: np.ndarray, special_mask) -> np.ndarray:
        rows = _content_rows(embedding, special_mask)
        if rows.shape[0] == 0:
            return np.zeros(rows.shape[1] if rows.ndim == 2 else self.embedding_dim)
        return rows.mean(axis=0)

    def predict_x0(self, x_t, embedding, t, special_mask=None):
        self._check_inputs(x_t, embedding, t)
        if embedding.shape[1] != self.embedding_dim:
            raise DimensionMismatch(
                f"embedding dim {embedding.shape[1]} != {self.embedding_dim}"
            )
        pred = self.W @ self._pooled(embedding, special_mask)
        if self.state_coupling != 0.0:
            pred = pred + self.state_coupling * x_t
        return pred

    def embedding_vjp(self, x_t, embedding, t, cotangent, special_mask=None):
        self._check_inputs(x_t, embedding, t)
        if cotangent.shape != self.image_shape:
            raise ShapeMismatch("cotangent shape != image shape")
        grad = np.zeros_like(embedding, dtype=np.float64)
        content = (
            np.ones(embedding.shape[0], dtype=bool)
            if special_mask is None
            else ~special_mask
        )
        n_eff = int(content.sum())
        if n_eff:
            grad[content] = (self.W.T @ cotangent) / n_eff
        return grad


def add_noise(backbone: Backbone, x0: np.ndarray, eps: np.ndarray, t: int) -> np.ndarray:
    """Forward process at t: alpha_t x0 + sigma_t eps."""
    if x0.shape != backbone.image_shape or eps.shape != backbone.image_shape:
        raise ShapeMismatch("x0/eps shape != backbone image shape")
    a, s = backbone.schedule.coeffs(t)
    return a * x0 + s * eps


def guided_x0(pred_uncond: np.ndarray, pred_cond: np.ndarray, weight: float) -> np.ndarray:
    """Classifier-free guidance merge; returns pred_cond exactly at weight 1."""
    if pred_uncond.shape != pred_cond.shape:
        raise ShapeMismatch("guidance branch shapes differ")
    if weight == 1.0:
        return pred_cond
    return pred_uncond + weight * (pred_cond - pred_uncond)


# ---------------------------------------------------------------------------
# Sampling


class Conditioning(NamedTuple):
    """Embedding matrix plus the mask of rows excluded from pooling/editing."""

    embedding: np.ndarray
    special_mask: np.ndarray | None


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 50
    guidance_weight: float = 7.5
    seed: int = 0
    record_trajectory: bool = False

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("need at least one sampler step")


@dataclass
class SampleResult:
    final: np.ndarray
    times: tuple[int, ...]
    trajectory: list[tuple[int, np.ndarray]] | None = None


def sample_times(num_train_steps: int, steps: int) -> tuple[int, ...]:
    """Strictly decreasing grid of `steps` timesteps from T down to 1."""
    if steps > num_train_steps:
        raise ValueError("more sampler steps than train timesteps")
    grid = np.linspace(num_train_steps, 1, steps)
    return tuple(int(round(v)) for v in grid)


def sample(
    backbone: Backbone,
    conditioning: Conditioning | Callable[[int], Conditioning],
    config: SamplerConfig,
    uncond: Conditioning | None = None,
) -> SampleResult:
    """Deterministic DDIM sampling from seeded Gaussian noise.

    `conditioning` is either a fixed Conditioning or a callable mapping the
    zero-based sampler step index to one, which is how delayed or per-step
    edited embeddings enter generation. With guidance_weight != 1 the uncond
    branch is required and is never time-varying.
    """
    if callable(conditioning):
        provider = conditioning
    else:
        fixed = conditioning
        provider = lambda step: fixed
    if config.guidance_weight != 1.0 and uncond is None:
        raise ValueError("guidance weight != 1 requires an unconditional embedding")

    times = sample_times(backbone.schedule.num_train_steps, config.steps)
    rng = np.random.default_rng(config.seed)
    x = rng.standard_normal(backbone.image_shape)
    trajectory = [] if config.record_trajectory else None

    for step, t in enumerate(times):
        if trajectory is not None:
            trajectory.append((t, x.copy()))
        cond = provider(step)
        pred_c = backbone.predict_x0(x, cond.embedding, t, cond.special_mask)
        if config.guidance_weight == 1.0:
            pred = pred_c
        else:
            pred_u = backbone.predict_x0(x, uncond.embedding, t, uncond.special_mask)
            pred = guided_x0(pred_u, pred_c, config.guidance_weight)
        if step == len(times) - 1:
            x = pred
        else:
            a, s = backbone.schedule.coeffs(t)
            a2, s2 = backbone.schedule.coeffs(times[step + 1])
            eps_hat = (x - a * pred) / s
            x = a2 * pred + s2 * eps_hat
    return SampleResult(final=x, times=times, trajectory=trajectory)


# ---------------------------------------------------------------------------
# Instrumentation wrappers


class CountingBackbone(Backbone):
    """Forwards to a base backbone while counting predict_x0 evaluations."""

    def __init__(self, base: Backbone):
        self.base = base
        self.backbone_id = base.backbone_id
        self.image_shape = base.image_shape
        self.schedule = base.schedule
        self.supported_encoders = base.supported_encoders
        self.calls = 0

    def predict_x0(self, x_t, embedding, t, special_mask=None):
        self.calls += 1
        return self.base.predict_x0(x_t, embedding, t, special_mask)

    def embedding_vjp(self, x_t, embedding, t, cotangent, special_mask=None):
        return self.base.embedding_vjp(x_t, embedding, t, cotangent, special_mask)


class RecordingBackbone(Backbone):
    """Forwards to a base backbone while recording (t, embedding) per call.

    Used to assert exactly which conditioning the sampler fed at each step,
    e.g. that a delayed delta is absent from the first k steps bit-for-bit.
    """

    def __init__(self, base: Backbone):
        self.base = base
        self.backbone_id = base.backbone_id
        self.image_shape = base.image_shape
        self.schedule = base.schedule
        self.supported_encoders = base.supported_encoders
        self.calls: list[tuple[int, np.ndarray]] = []

    def predict_x0(self, x_t, embedding, t, special_mask=None):
        self.calls.append((int(t), embedding.copy()))
        return self.base.predict_x0(x_t, embedding, t, special_mask)

    def embedding_vjp(self, x_t, embedding, t, cotangent, special_mask=None):
        return self.base.embedding_vjp(x_t, embedding, t, cotangent, special_mask)


# ---------------------------------------------------------------------------
# Registry

_BACKBONES: dict[str, Backbone] = {}


def register_backbone(backbone: Backbone) -> Backbone:
    _BACKBONES[backbone.backbone_id] = backbone
    return backbone


def get_backbone(backbone_id: str) -> Backbone:
    try:
        return _BACKBONES[backbone_id]
    except KeyError:
        raise KeyError(
            f"unknown backbone {backbone_id!r}; known: {sorted(_BACKBONES)}"
        ) from None


def list_backbones() -> list[str]:
    return sorted(_BACKBONES)


def register_default_backbones() -> None:
    if "toy-linear16" in _BACKBONES:
        return
    register_backbone(ToyLinearBackbone())
    register_backbone(ToyLinearBackbone(backbone_id="toy-mix16", state_coupling=0.8))


register_default_backbones()
