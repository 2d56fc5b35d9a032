"""HTTP service for quadruplet detection and interactive prompting.

Model weights are read-only after startup, every response depends only on
(checkpoint, request), and masks travel as COCO-style RLE at the feature
resolution with the scale factor in the response metadata.
"""

from __future__ import annotations

import base64
import binascii
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import torch
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from . import __version__
from .evalinfer import Quadruplet, assemble
from .foundation import ToyFoundationModel
from .hoi_decoder import HOIDecoder, prediction_rows
from .openvocab import (
    HashWordEmbedder,
    object_sentence,
    pool_visual_prompt,
    retrieve_text,
    retrieve_visual,
    verb_sentence,
)
from .pipeline import (
    TrainConfig,
    checkpoint_hash,
    image_pixels,
    load_checkpoint,
    synth_dataset,
)

MAX_IMAGE_B64_BYTES = 6_000_000


class PromptRequest(BaseModel):
    image_b64: Optional[str] = None
    image_id: Optional[str] = None
    kind: Literal["detect", "visual", "text"] = "detect"
    points: list[tuple[float, float]] = Field(default_factory=list)
    text: str = ""
    top_k: int = 100


@dataclass
class ServiceState:
    decoder: HOIDecoder
    foundation: ToyFoundationModel
    cfg: TrainConfig
    object_names: list[str]
    verb_names: list[str]
    checkpoint_hash: str
    image_registry: dict[str, np.ndarray]


class HttpError(Exception):
    def __init__(self, status: int, message: str):
        self.status = status
        self.message = message


def _decode_image(req: PromptRequest, state: ServiceState) -> np.ndarray:
    if req.image_id is not None:
        img = state.image_registry.get(req.image_id)
        if img is None:
            raise HttpError(400, f"unknown image id {req.image_id!r}")
        return img
    if not req.image_b64:
        raise HttpError(400, "request needs image_b64 or image_id")
    if len(req.image_b64) > MAX_IMAGE_B64_BYTES:
        raise HttpError(413, "image payload too large")
    try:
        raw = base64.b64decode(req.image_b64, validate=True)
    except (binascii.Error, ValueError):
        raise HttpError(422, "image_b64 is not valid base64")
    try:
        from PIL import Image

        with Image.open(io.BytesIO(raw)) as im:
            return np.asarray(im.convert("RGB"))
    except Exception:
        raise HttpError(422, "could not decode the image payload")


def _quadruplet_payload(state: ServiceState, quads: list[Quadruplet], found) -> dict:
    gh, gw = found.grid_size
    height, width = found.image_size
    return {
        "model": {
            "version": __version__,
            "checkpoint_hash": state.checkpoint_hash,
            "foundation_hash": state.foundation.param_hash(),
            "mask_scale": height // gh,
            "grid": [gh, gw],
            "image": [height, width],
        },
        "quadruplets": [
            q.to_record(state.object_names, state.verb_names) for q in quads
        ],
    }


def _best_quadruplet_for_row(state, out, rows, row_position: int) -> Quadruplet:
    """Highest-score quadruplet whose slot matches the retrieved row."""
    target = int(rows.row_index[row_position])
    for q in assemble(out, lam=state.cfg.score_lambda, top_k=10**9):
        if q.query_index == target:
            return q
    raise HttpError(500, "retrieved query produced no quadruplet")


def load_state(checkpoint_path, register_synth: bool = True) -> ServiceState:
    decoder, cfg, blob = load_checkpoint(checkpoint_path)
    dataset = synth_dataset(cfg.synth_seed, cfg.synth_images, cfg.image_size)
    foundation = ToyFoundationModel(cfg.foundation_config())
    if blob["foundation_hash"] != foundation.param_hash():
        raise ValueError("checkpoint was trained against a different foundation")
    registry = {}
    if register_synth:
        registry = {img.image_id: image_pixels(img) for img in dataset.images}
    return ServiceState(
        decoder=decoder,
        foundation=foundation,
        cfg=cfg,
        object_names=dataset.object_names,
        verb_names=dataset.verb_names,
        checkpoint_hash=blob.get("decoder_hash") or checkpoint_hash(decoder),
        image_registry=registry,
    )


def create_app(state: ServiceState, static_dir: Optional[str] = None) -> FastAPI:
    app = FastAPI(title="seg2hoi", version=__version__)

    @app.exception_handler(HttpError)
    async def handle_http_error(request: Request, exc: HttpError):
        return JSONResponse(status_code=exc.status, content={"error": exc.message})

    @app.exception_handler(RequestValidationError)
    async def handle_validation(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": str(exc.errors())})

    @app.get("/v1/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.get("/v1/meta")
    def meta():
        return {
            "version": __version__,
            "checkpoint_hash": state.checkpoint_hash,
            "foundation_hash": state.foundation.param_hash(),
            "object_names": state.object_names,
            "verb_names": state.verb_names,
            "templates": {
                "object": object_sentence("[Object]"),
                "verb": verb_sentence("[Verb]"),
            },
            "registered_images": sorted(state.image_registry),
        }

    def run_model(image: np.ndarray):
        try:
            found = state.foundation.extract(image)
        except ValueError as exc:
            raise HttpError(400, str(exc))
        with torch.no_grad():
            out = state.decoder(found)
        return found, out

    @app.post("/v1/detect")
    def detect(req: PromptRequest):
        image = _decode_image(req, state)
        if req.top_k < 1:
            raise HttpError(400, "top_k must be positive")
        found, out = run_model(image)
        quads = assemble(
            out,
            lam=state.cfg.score_lambda,
            top_k=req.top_k,
            score_floor=state.cfg.score_floor,
        )
        return _quadruplet_payload(state, quads, found)

    @app.post("/v1/prompt/visual")
    def prompt_visual(req: PromptRequest):
        image = _decode_image(req, state)
        if not req.points:
            raise HttpError(400, "visual prompt needs at least one point")
        found, out = run_model(image)
        try:
            prompt = pool_visual_prompt(
                found.pixel_embedding, req.points, found.image_size
            )
        except ValueError as exc:
            raise HttpError(400, str(exc))
        rows = prediction_rows(out.final, out.objects, out.humans)
        e_union = out.final.e_union[rows.row_index].detach().numpy()
        pick = retrieve_visual(prompt, e_union)
        quad = _best_quadruplet_for_row(state, out, rows, pick)
        return _quadruplet_payload(state, [quad], found)

    @app.post("/v1/prompt/text")
    def prompt_text(req: PromptRequest):
        image = _decode_image(req, state)
        if not req.text.strip():
            raise HttpError(400, "text prompt must be non-empty")
        found, out = run_model(image)
        embedder = HashWordEmbedder(
            dim=state.cfg.hidden_dim, seed=state.cfg.foundation_seed
        )
        try:
            prompt = embedder(req.text)
        except ValueError as exc:
            raise HttpError(400, str(exc))
        rows = prediction_rows(out.final, out.objects, out.humans)
        e_obj = out.final.e_object[rows.row_index].detach().numpy()
        e_verb = out.final.e_verb[rows.row_index].detach().numpy()
        pick = retrieve_text(prompt, e_obj, e_verb)
        quad = _best_quadruplet_for_row(state, out, rows, pick)
        return _quadruplet_payload(state, [quad], found)

    if static_dir and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    return app


def serve(checkpoint_path, port: int, host: str = "127.0.0.1", static_dir=None):
    import uvicorn

    state = load_state(checkpoint_path)
    app = create_app(state, static_dir=static_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")
