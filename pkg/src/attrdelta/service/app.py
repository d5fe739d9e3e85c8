"""FastAPI application factory for the control service.

The service owns one backbone, one encoder, and one delta registry. Requests
are validated synchronously (bad input fails fast with 4xx); accepted work
runs on a background worker and is polled via the jobs endpoints. Sample
renders are served as PNG.
"""

from __future__ import annotations

import math
from contextlib import asynccontextmanager

import numpy as np
from fastapi import FastAPI, HTTPException, Response
from fastapi.middleware.cors import CORSMiddleware

from ..deltafile import DeltaRegistry
from ..diffusion import get_backbone
from ..encoders import get_encoder
from ..engine import (
    DeltaApplication,
    GenerationConfig,
    SweepAxis,
    generate_with_deltas,
    sweep_grid,
)
from ..errors import AttrDeltaError
from ..extraction import AttributeDelta
from ..imaging import sample_to_png_bytes
from ..prompts import locate_subject, locate_subject_all
from .jobs import JobStore
from .schemas import (
    ApplicationSpec,
    CellInfo,
    DeltaInfo,
    DeltasResponse,
    GenerateRequest,
    JobAccepted,
    JobStatus,
    ReloadResponse,
    SweepAxisSpec,
    SweepRequest,
)

MAX_SWEEP_CELLS = 49
MAX_SWEEP_AXES = 2


def _bad_request(message: str) -> HTTPException:
    return HTTPException(status_code=400, detail=message)


def _not_found(message: str) -> HTTPException:
    return HTTPException(status_code=404, detail=message)


def create_app(
    registry_root: str = "./deltas",
    backbone_id: str = "toy-mix16",
    encoder_id: str = "toy-agg16",
    image_size: int = 64,
) -> FastAPI:
    registry = DeltaRegistry(registry_root)
    backbone = get_backbone(backbone_id)
    encoder = get_encoder(encoder_id)
    if encoder_id not in backbone.supported_encoders:
        raise ValueError(
            f"backbone {backbone_id} does not support encoder {encoder_id}"
        )
    jobs = JobStore()
    seed_rng = np.random.default_rng()

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        jobs.start()
        yield
        jobs.stop()

    app = FastAPI(title="attrdelta control service", lifespan=lifespan)
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    app.state.jobs = jobs
    app.state.registry = registry

    def load_delta_or_404(key: str) -> AttributeDelta:
        try:
            delta = registry.load(key)
        except KeyError as exc:
            raise _not_found(str(exc.args[0]))
        if delta.encoder_id != encoder.encoder_id:
            raise _bad_request(
                f"delta {key!r} targets encoder {delta.encoder_id!r}; "
                f"this service runs {encoder.encoder_id!r}"
            )
        return delta

    def build_application(spec: ApplicationSpec, prompt: str, steps: int) -> DeltaApplication:
        if not math.isfinite(spec.scale):
            raise _bad_request(f"scale must be finite, got {spec.scale}")
        delta = load_delta_or_404(spec.delta)
        try:
            app_obj = DeltaApplication(
                delta=delta,
                subject_word=spec.subject_word,
                scale=spec.scale,
                occurrence=spec.occurrence,
                delay_steps=spec.delay_steps,
            )
        except ValueError as exc:
            raise _bad_request(str(exc))
        if spec.delay_steps > steps:
            raise _bad_request(
                f"delay_steps {spec.delay_steps} exceeds steps {steps}"
            )
        tp = _encode_or_400(prompt)
        try:
            if spec.occurrence == "all":
                locate_subject_all(tp, spec.subject_word)
            else:
                locate_subject(tp, spec.subject_word, spec.occurrence)
        except AttrDeltaError as exc:
            raise _bad_request(str(exc))
        return app_obj

    def _encode_or_400(prompt: str):
        try:
            return encoder.encode(prompt)
        except AttrDeltaError as exc:
            raise _bad_request(str(exc))

    def pick_seed(seed: int | None) -> int:
        return int(seed_rng.integers(1 << 31)) if seed is None else int(seed)

    # ------------------------------------------------------------------
    # Introspection

    @app.get("/api/health")
    def health() -> dict:
        return {"status": "ok"}

    @app.get("/api/deltas", response_model=DeltasResponse)
    def list_deltas() -> DeltasResponse:
        entries, problems = registry.scan()
        return DeltasResponse(
            deltas=[
                DeltaInfo(
                    key=e.key,
                    name=e.name,
                    encoder_id=e.encoder_id,
                    method=e.method,
                    embedding_dim=e.embedding_dim,
                    training_nouns=list(e.training_nouns),
                    config_digest=e.config_digest,
                    created_at=e.created_at,
                )
                for e in entries
            ],
            warnings=problems,
            backbone_id=backbone.backbone_id,
            encoder_id=encoder.encoder_id,
        )

    @app.post("/api/reload", response_model=ReloadResponse)
    def reload() -> ReloadResponse:
        entries, problems = registry.scan()
        return ReloadResponse(count=len(entries), warnings=problems)

    # ------------------------------------------------------------------
    # Generation

    @app.post("/api/generate", response_model=JobAccepted, status_code=202)
    def generate(req: GenerateRequest) -> JobAccepted:
        _encode_or_400(req.prompt)
        seed = pick_seed(req.seed)
        applications = tuple(
            build_application(spec, req.prompt, req.steps) for spec in req.applications
        )
        cfg = GenerationConfig(
            prompt=req.prompt,
            seed=seed,
            steps=req.steps,
            guidance_weight=req.guidance_weight,
            applications=applications,
        )

        def run() -> dict:
            result = generate_with_deltas(backbone, encoder, cfg)
            return {
                "png": sample_to_png_bytes(result.sample, image_size),
                "provenance": result.provenance,
            }

        job = jobs.submit("generate", seed, run)
        return JobAccepted(
            job_id=job.job_id,
            kind="generate",
            seed=seed,
            status_url=f"/api/jobs/{job.job_id}",
        )

    @app.post("/api/sweep", response_model=JobAccepted, status_code=202)
    def sweep(req: SweepRequest) -> JobAccepted:
        _encode_or_400(req.prompt)
        if not (1 <= len(req.axes) <= MAX_SWEEP_AXES):
            raise _bad_request(
                f"sweep needs 1..{MAX_SWEEP_AXES} axes, got {len(req.axes)}"
            )
        cells = 1
        for ax in req.axes:
            if not ax.scales:
                raise _bad_request("sweep axis has no scales")
            for s in ax.scales:
                if not math.isfinite(s):
                    raise _bad_request(f"scale must be finite, got {s}")
            cells *= len(ax.scales)
        if cells > MAX_SWEEP_CELLS:
            raise _bad_request(
                f"sweep grid of {cells} cells exceeds the {MAX_SWEEP_CELLS} cap"
            )
        seed = pick_seed(req.seed)
        axes = []
        for ax in req.axes:
            probe = ApplicationSpec(
                delta=ax.delta,
                subject_word=ax.subject_word,
                scale=ax.scales[0],
                occurrence=ax.occurrence,
                delay_steps=ax.delay_steps,
            )
            application = build_application(probe, req.prompt, req.steps)
            axes.append(
                SweepAxis(
                    delta=application.delta,
                    subject_word=ax.subject_word,
                    scales=tuple(ax.scales),
                    occurrence=ax.occurrence,
                    delay_steps=ax.delay_steps,
                )
            )
        base = GenerationConfig(
            prompt=req.prompt,
            seed=seed,
            steps=req.steps,
            guidance_weight=req.guidance_weight,
        )

        def run() -> dict:
            result = sweep_grid(backbone, encoder, base, axes)
            return {
                "cells": [
                    {
                        "scales": list(cell.scales),
                        "unmodified": cell.unmodified,
                        "png": sample_to_png_bytes(cell.result.sample, image_size),
                        "provenance": cell.result.provenance,
                    }
                    for cell in result.cells
                ],
                "shape": list(result.shape),
            }

        job = jobs.submit("sweep", seed, run)
        return JobAccepted(
            job_id=job.job_id,
            kind="sweep",
            seed=seed,
            status_url=f"/api/jobs/{job.job_id}",
        )

    # ------------------------------------------------------------------
    # Jobs

    def job_or_404(job_id: str):
        job = jobs.get(job_id)
        if job is None:
            raise _not_found(f"unknown job {job_id!r}")
        return job

    @app.get("/api/jobs/{job_id}", response_model=JobStatus)
    def job_status(job_id: str) -> JobStatus:
        job = job_or_404(job_id)
        status = JobStatus(
            job_id=job.job_id, kind=job.kind, state=job.state, seed=job.seed,
            error=job.error,
        )
        if job.state == "done" and job.kind == "generate":
            status.provenance = job.result["provenance"]
            status.image_url = f"/api/jobs/{job.job_id}/image"
        if job.state == "done" and job.kind == "sweep":
            status.cells = [
                CellInfo(
                    index=i,
                    scales=cell["scales"],
                    unmodified=cell["unmodified"],
                    image_url=f"/api/jobs/{job.job_id}/cells/{i}/image",
                )
                for i, cell in enumerate(job.result["cells"])
            ]
        return status

    def _require_done(job) -> None:
        if job.state in ("queued", "running"):
            raise HTTPException(status_code=409, detail=f"job is {job.state}")
        if job.state == "failed":
            raise HTTPException(status_code=409, detail=f"job failed: {job.error}")

    @app.get("/api/jobs/{job_id}/image")
    def job_image(job_id: str) -> Response:
        job = job_or_404(job_id)
        _require_done(job)
        if job.kind != "generate":
            raise _bad_request("not a generate job; fetch cell images instead")
        return Response(content=job.result["png"], media_type="image/png")

    @app.get("/api/jobs/{job_id}/cells/{index}/image")
    def cell_image(job_id: str, index: int) -> Response:
        job = job_or_404(job_id)
        _require_done(job)
        if job.kind != "sweep":
            raise _bad_request("not a sweep job")
        cells = job.result["cells"]
        if not (0 <= index < len(cells)):
            raise _not_found(f"cell {index} out of range ({len(cells)} cells)")
        return Response(content=cells[index]["png"], media_type="image/png")

    return app
