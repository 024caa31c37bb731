"""FastAPI application implementing the /v1/scores wire protocol.

Request (POST /v1/scores)::

    {"images": [{"encoding": "png_base64", "data": "<base64 PNG>"}, ...]}

Response (200)::

    {"model": "<id>", "scores": [[p_0, ..., p_{K-1}], ...]}

Each score row is a softmax distribution (sums to 1 within 1e-5).  Error
mapping: 400 for malformed JSON or a request that does not match the schema,
422 for an image that cannot be decoded, 500 for a model evaluation failure.
"""

import base64
import binascii
import io
import json

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from PIL import Image

from .config import ServerConfig
from .models import load_model

_RESAMPLE = {"bilinear": Image.BILINEAR, "nearest": Image.NEAREST}


class BadRequest(Exception):
    """Request body is not valid JSON or does not match the schema."""


class UndecodableImage(Exception):
    """An image entry cannot be decoded to pixels the model accepts."""


def _parse_request(raw: bytes) -> list[dict]:
    try:
        body = json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise BadRequest(f"body is not valid JSON: {exc}") from exc
    if not isinstance(body, dict) or not isinstance(body.get("images"), list):
        raise BadRequest('body must be an object with an "images" list')
    images = body["images"]
    if not images:
        raise BadRequest('"images" must not be empty')
    for i, entry in enumerate(images):
        if not isinstance(entry, dict):
            raise BadRequest(f"images[{i}] must be an object")
        if entry.get("encoding") != "png_base64":
            raise BadRequest(f"images[{i}]: unsupported encoding "
                             f"{entry.get('encoding')!r}")
        if not isinstance(entry.get("data"), str):
            raise BadRequest(f'images[{i}]: "data" must be a string')
    return images


def _decode_image(entry: dict, index: int, cfg: ServerConfig) -> np.ndarray:
    try:
        raw = base64.b64decode(entry["data"], validate=True)
    except (binascii.Error, ValueError) as exc:
        raise UndecodableImage(f"images[{index}]: invalid base64") from exc
    try:
        with Image.open(io.BytesIO(raw)) as im:
            rgb = im.convert("RGB")
    except Exception as exc:
        raise UndecodableImage(f"images[{index}]: not a decodable image") \
            from exc
    if rgb.size != (cfg.width, cfg.height):
        if cfg.resize == "reject":
            raise UndecodableImage(
                f"images[{index}]: size {rgb.size} does not match the model "
                f"input {(cfg.width, cfg.height)}")
        rgb = rgb.resize((cfg.width, cfg.height), _RESAMPLE[cfg.resize])
    return np.asarray(rgb, dtype=np.float64) / 255.0


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=1, keepdims=True)


def create_app(config: ServerConfig | None = None) -> FastAPI:
    cfg = config or ServerConfig()
    app = FastAPI(title="oracle-server")
    app.state.config = cfg
    app.state.model = load_model(cfg.model, cfg.height, cfg.width,
                                 cfg.deterministic)

    @app.get("/v1/health")
    def health():
        return {"model": cfg.model, "classes": app.state.model.classes}

    @app.post("/v1/scores")
    async def scores(request: Request):
        try:
            entries = _parse_request(await request.body())
        except BadRequest as exc:
            return JSONResponse({"error": str(exc)}, status_code=400)
        try:
            batch = np.stack([_decode_image(e, i, cfg)
                              for i, e in enumerate(entries)])
        except UndecodableImage as exc:
            return JSONResponse({"error": str(exc)}, status_code=422)
        try:
            probs = _softmax_rows(np.asarray(app.state.model.logits(batch),
                                             dtype=np.float64))
        except Exception as exc:
            return JSONResponse({"error": f"model failure: {exc}"},
                                status_code=500)
        return {"model": cfg.model, "scores": probs.tolist()}

    return app
