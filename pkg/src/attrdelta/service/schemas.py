"""Request and response bodies for the control service."""

from __future__ import annotations

from typing import Literal, Optional, Union

from pydantic import BaseModel, Field


class ApplicationSpec(BaseModel):
    delta: str = Field(description="registry key: name or name@encoder")
    subject_word: str
    scale: float
    occurrence: Union[int, Literal["all"]] = 0
    delay_steps: int = Field(default=0, ge=0)


class GenerateRequest(BaseModel):
    prompt: str
    seed: Optional[int] = Field(default=None, description="server picks one if omitted")
    steps: int = Field(default=50, ge=1, le=1000)
    guidance_weight: float = 7.5
    applications: list[ApplicationSpec] = Field(default_factory=list)


class SweepAxisSpec(BaseModel):
    delta: str
    subject_word: str
    scales: list[float]
    occurrence: Union[int, Literal["all"]] = 0
    delay_steps: int = Field(default=0, ge=0)


class SweepRequest(BaseModel):
    prompt: str
    seed: Optional[int] = None
    steps: int = Field(default=50, ge=1, le=1000)
    guidance_weight: float = 7.5
    axes: list[SweepAxisSpec]


class JobAccepted(BaseModel):
    job_id: str
    kind: Literal["generate", "sweep"]
    seed: int
    status_url: str


class CellInfo(BaseModel):
    index: int
    scales: list[float]
    unmodified: bool
    image_url: str


class JobStatus(BaseModel):
    job_id: str
    kind: Literal["generate", "sweep"]
    state: Literal["queued", "running", "done", "failed"]
    seed: int
    error: Optional[str] = None
    provenance: Optional[dict] = None
    image_url: Optional[str] = None
    cells: Optional[list[CellInfo]] = None


class DeltaInfo(BaseModel):
    key: str
    name: str
    encoder_id: str
    method: str
    embedding_dim: int
    training_nouns: list[str]
    config_digest: str
    created_at: str


class DeltasResponse(BaseModel):
    deltas: list[DeltaInfo]
    warnings: list[str]
    backbone_id: str
    encoder_id: str


class ReloadResponse(BaseModel):
    count: int
    warnings: list[str]


class ErrorBody(BaseModel):
    error: str
    message: str
