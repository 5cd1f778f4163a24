"""HTTP inference service.

A small FastAPI app wrapping a trained checkpoint.  Endpoints:

* ``GET /healthz``  — 503 ``{"status": "loading"}`` until the checkpoint is
  loaded, then 200 with sha256 fingerprints of the checkpoint file and the
  zone registry.
* ``GET /zones``    — the zone registry as the UI needs it.
* ``POST /infer``   — multipart: an ``image`` PNG part plus a ``request``
  JSON part; returns the edited PNG with metadata headers.

Inference runs on a bounded thread pool (default two workers) so a burst of
requests queues instead of oversubscribing the CPU.  Validation failures
return 400 with machine-readable per-field errors; uploads over 16 MiB
return 413; unexpected failures return 500 with an opaque ``error_id`` that
is also logged server-side, so internals never leak to clients.
"""

from __future__ import annotations

import asyncio
import hashlib
import json
import logging
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from contextlib import asynccontextmanager
from pathlib import Path
from typing import Optional, Sequence

from fastapi import FastAPI, File, Form, UploadFile
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, Response

from . import inference, training
from .atlas import percent_to_normalized
from .errors import LdlaError
from .geometry import decode_png, encode_png

log = logging.getLogger("ldla.service")

MAX_UPLOAD_BYTES = 16 * 1024 * 1024

_PARAM_KEYS = frozenset({"gamma_n", "gamma_inf", "gamma_g", "seed"})


class _FieldErrors(Exception):
    """Collects per-field validation problems for a 400 response."""

    def __init__(self, errors: list[dict]):
        super().__init__(f"{len(errors)} validation error(s)")
        self.errors = errors


def _error_response(status: int, errors: list[dict]) -> JSONResponse:
    return JSONResponse(status_code=status, content={"errors": errors})


def _parse_infer_request(raw: str, registry) -> tuple[dict, inference.InferenceParams, str, bool]:
    """Validate the JSON ``request`` part -> (targets, params, ethnicity, refine)."""
    errors: list[dict] = []
    try:
        payload = json.loads(raw)
    except json.JSONDecodeError as e:
        raise _FieldErrors([{"field": "request", "message": f"invalid JSON: {e}"}]) from e
    if not isinstance(payload, dict):
        raise _FieldErrors([{"field": "request", "message": "must be a JSON object"}])

    valid_ids = [z.zone_id for z in registry]
    targets: dict[str, float] = {}
    raw_targets = payload.get("targets", {})
    if not isinstance(raw_targets, dict):
        errors.append({"field": "targets", "message": "must be an object of zone_id -> percent"})
    else:
        for zone_id, percent in raw_targets.items():
            field = f"targets.{zone_id}"
            if zone_id not in valid_ids:
                errors.append(
                    {
                        "field": field,
                        "message": f"unknown zone id; valid ids: {', '.join(valid_ids)}",
                    }
                )
                continue
            if not isinstance(percent, (int, float)) or isinstance(percent, bool):
                errors.append({"field": field, "message": "percent must be a number"})
                continue
            try:
                targets[zone_id] = percent_to_normalized(float(percent))
            except LdlaError as e:
                errors.append({"field": field, "message": str(e)})

    defaults = inference.InferenceParams()
    raw_params = payload.get("params", {})
    gamma_n, gamma_inf = defaults.noise_strength, defaults.num_steps
    gamma_g, seed = defaults.guidance_scale, defaults.seed
    if not isinstance(raw_params, dict):
        errors.append({"field": "params", "message": "must be an object"})
    else:
        unknown = sorted(set(raw_params) - _PARAM_KEYS)
        if unknown:
            errors.append(
                {
                    "field": "params",
                    "message": f"unknown keys {unknown}; allowed: {sorted(_PARAM_KEYS)}",
                }
            )
        gamma_n = raw_params.get("gamma_n", gamma_n)
        gamma_inf = raw_params.get("gamma_inf", gamma_inf)
        gamma_g = raw_params.get("gamma_g", gamma_g)
        seed = raw_params.get("seed", seed)

    params = None
    try:
        params = inference.InferenceParams(
            noise_strength=float(gamma_n),
            num_steps=int(gamma_inf),
            guidance_scale=float(gamma_g),
            seed=int(seed),
        )
    except (LdlaError, TypeError, ValueError) as e:
        errors.append({"field": "params", "message": str(e)})

    ethnicity = payload.get("ethnicity", "synthetic-b")
    if not isinstance(ethnicity, str) or not ethnicity:
        errors.append({"field": "ethnicity", "message": "must be a non-empty string"})

    refine = payload.get("refine", False)
    if not isinstance(refine, bool):
        errors.append({"field": "refine", "message": "must be a boolean"})

    if errors:
        raise _FieldErrors(errors)
    assert params is not None
    return targets, params, ethnicity, refine


def create_app(
    checkpoint_path: str | Path,
    *,
    cors_origins: Optional[Sequence[str]] = None,
    workers: int = 2,
    refiner: str = "identity",
) -> FastAPI:
    """Build the service around one trained checkpoint.

    The checkpoint is loaded once at startup; until then every endpoint
    except ``/healthz`` responds 503.
    """
    checkpoint_path = Path(checkpoint_path)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        app.state.executor = ThreadPoolExecutor(
            max_workers=workers, thread_name_prefix="ldla-infer"
        )
        raw = checkpoint_path.read_bytes()
        app.state.checkpoint_sha256 = hashlib.sha256(raw).hexdigest()
        loaded = training.load_checkpoint(checkpoint_path)
        loaded.models.denoiser.eval()
        loaded.models.scorenet.eval()
        app.state.models = loaded.models
        registry_blob = json.dumps(
            {"zones": [dict(r) for r in _registry_records(loaded.models.registry)]},
            sort_keys=True,
        ).encode()
        app.state.registry_sha256 = hashlib.sha256(registry_blob).hexdigest()
        if refiner == "diffusion":
            app.state.refiner = inference.DiffusionRefiner(loaded.models)
        else:
            app.state.refiner = inference.IdentityRefiner()
        app.state.loaded = True
        log.info("checkpoint %s loaded (%d bytes)", checkpoint_path, len(raw))
        yield
        app.state.executor.shutdown(wait=False)

    app = FastAPI(title="ldla", lifespan=lifespan)
    app.state.loaded = False
    app.add_middleware(
        CORSMiddleware,
        allow_origins=list(cors_origins) if cors_origins else ["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.get("/healthz")
    async def healthz():
        if not getattr(app.state, "loaded", False):
            return JSONResponse(status_code=503, content={"status": "loading"})
        return {
            "status": "ok",
            "checkpoint_sha256": app.state.checkpoint_sha256,
            "registry_sha256": app.state.registry_sha256,
        }

    @app.get("/zones")
    async def zones():
        if not getattr(app.state, "loaded", False):
            return JSONResponse(status_code=503, content={"status": "loading"})
        return {"zones": _registry_records(app.state.models.registry)}

    @app.post("/infer")
    async def infer(image: UploadFile = File(...), request: str = Form(...)):
        if not getattr(app.state, "loaded", False):
            return JSONResponse(status_code=503, content={"status": "loading"})
        raw_image = await image.read()
        if len(raw_image) > MAX_UPLOAD_BYTES:
            return _error_response(
                413,
                [
                    {
                        "field": "image",
                        "message": f"upload exceeds {MAX_UPLOAD_BYTES} bytes",
                    }
                ],
            )
        try:
            targets, params, ethnicity, refine = _parse_infer_request(
                request, app.state.models.registry
            )
        except _FieldErrors as e:
            return _error_response(400, e.errors)

        try:
            face = decode_png(raw_image)
        except LdlaError as e:
            return _error_response(400, [{"field": "image", "message": str(e)}])

        applied = {k: round(v * 100) for k, v in sorted(targets.items())}
        no_op = not targets and (not refine or app.state.refiner.is_identity)
        started = time.monotonic()
        if no_op:
            # Byte-identical echo: nothing would change, so the original
            # upload is returned verbatim rather than re-encoded.
            body = raw_image
        else:
            loop = asyncio.get_running_loop()

            def _run() -> bytes:
                out = inference.age_face(
                    face, targets, ethnicity, params, app.state.models
                )
                if refine:
                    out = inference.refine_face(
                        out, app.state.models, refiner=app.state.refiner
                    )
                return encode_png(out)

            try:
                body = await loop.run_in_executor(app.state.executor, _run)
            except Exception:
                error_id = uuid.uuid4().hex
                log.exception("inference failed (error_id=%s)", error_id)
                return JSONResponse(status_code=500, content={"error_id": error_id})
        elapsed_ms = (time.monotonic() - started) * 1000.0
        return Response(
            content=body,
            media_type="image/png",
            headers={
                "X-Ldla-Seed": str(params.seed),
                "X-Ldla-Duration-Ms": f"{elapsed_ms:.1f}",
                "X-Ldla-Applied": json.dumps(applied),
            },
        )

    return app


def _registry_records(registry) -> list[dict]:
    """Registry entries trimmed to what clients are promised."""
    return [
        {
            "zone_id": z.zone_id,
            "display_noun": z.display_noun,
            "scale_max": z.scale_max,
            "default_box": list(z.default_box),
        }
        for z in registry
    ]
