"""HTTP inference service: caption in, generated faces plus the cycle
reconstruction out. Model parameters are loaded once into an immutable
snapshot; handlers are stateless."""

import base64
import io
import logging
import secrets
import time
import uuid

import numpy as np
import torch
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from PIL import Image
from pydantic import BaseModel, Field

from . import checkpoint, gan, metrics, render
from .attributes import DEFAULT_SCHEMA
from .grammar import attributes_from_caption, clause_phrasings
from .text_encoder import pad_batch, tokenize

log = logging.getLogger(__name__)


class GenerateRequest(BaseModel):
    caption: str
    seed: int | None = Field(default=None, ge=0)
    samples: int = Field(default=1, ge=1, le=16)


def _png_b64(image_chw):
    raw = render.encode_u8(image_chw.permute(1, 2, 0).numpy())
    buf = io.BytesIO()
    Image.fromarray(raw, mode="RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def create_app(checkpoint_path):
    bundle, header, _ = checkpoint.load_checkpoint(checkpoint_path)
    bundle.eval()
    model_hash = checkpoint.checkpoint_hash(checkpoint_path)
    started = time.monotonic()

    app = FastAPI(title="cycleface", docs_url=None, redoc_url=None)

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request, exc):
        detail = [
            {"field": ".".join(str(p) for p in err["loc"]), "message": err["msg"]}
            for err in exc.errors()
        ]
        return JSONResponse(status_code=400, content={"error": "validation",
                                                      "detail": detail})

    @app.exception_handler(Exception)
    async def internal_handler(request, exc):
        incident = uuid.uuid4().hex[:12]
        log.exception("internal error %s on %s", incident, request.url.path)
        return JSONResponse(status_code=500, content={"error": "internal",
                                                      "incident": incident})

    @app.middleware("http")
    async def request_log(request: Request, call_next):
        t0 = time.monotonic()
        response = await call_next(request)
        log.info("%s %s %d %.1fms", request.method, request.url.path,
                 response.status_code, (time.monotonic() - t0) * 1000)
        return response

    @app.get("/api/health")
    async def health():
        return {"model_hash": model_hash,
                "uptime_s": round(time.monotonic() - started, 3)}

    @app.get("/api/attributes")
    async def attributes():
        return {"schema_version": DEFAULT_SCHEMA.version,
                "names": list(DEFAULT_SCHEMA.names),
                **clause_phrasings()}

    @app.post("/api/generate")
    async def generate(req: GenerateRequest):
        caption = req.caption.strip()
        if not caption:
            return JSONResponse(status_code=400, content={
                "error": "validation",
                "detail": [{"field": "caption", "message": "caption is empty"}]})
        seed = req.seed if req.seed is not None else secrets.randbelow(2 ** 31)
        requested_attrs, _ = attributes_from_caption(caption)

        with torch.no_grad():
            ids = pad_batch([tokenize(caption, bundle.vocab)])
            emb = bundle.encoder(ids)[0]
            z = torch.stack([gan.make_latent(emb, seed + k)
                             for k in range(req.samples)])
            images = bundle.generator(z)
            recovered = metrics._decode_attributes(bundle, images)
            feats = bundle.feature_extractor(images)
            seqs, _ = bundle.decoder.greedy(feats)

        samples = []
        for k in range(req.samples):
            words = [bundle.vocab.tokens[i] for i in seqs[k] if i > 3]
            rec = recovered[k]
            diff = [bool(a != b) for a, b in zip(requested_attrs.bits, rec.bits)]
            samples.append({
                "png_base64": _png_b64(images[k]),
                "reconstructed_caption": " ".join(words),
                "recovered_attributes": {
                    n: bool(b) for n, b in zip(DEFAULT_SCHEMA.names, rec.bits)},
                "attribute_diff": {
                    n: d for n, d in zip(DEFAULT_SCHEMA.names, diff)},
            })
        return {
            "samples": samples,
            "seed": seed,
            "requested_attributes": {
                n: bool(b) for n, b in zip(DEFAULT_SCHEMA.names, requested_attrs.bits)},
            "embedding_norm": float(torch.linalg.vector_norm(emb)),
            "model_hash": model_hash,
        }

    return app
