"""FastAPI app implementing the critic wire protocol.

POST /score with {width, height, prompt, pixels_b64, need_grad}; pixels are
base64 little-endian float32, row-major HxWx3.  The response carries the same
encoding for the gradient.  Any malformed payload is a 400, a missing model
is a 503, and the protocol version header is checked and echoed on every
response.
"""

from __future__ import annotations

import base64
import logging
import math

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

log = logging.getLogger(__name__)

PROTOCOL_VERSION = "1"
PROTO_HEADER = "X-Critic-Proto"


class ScoreRequest(BaseModel):
    width: int
    height: int
    prompt: str = ""
    pixels_b64: str
    need_grad: bool = True


def _error(status: int, detail: str) -> JSONResponse:
    return JSONResponse(
        status_code=status, content={"detail": detail}, headers={PROTO_HEADER: PROTOCOL_VERSION}
    )


def create_app(scorer=None, load_error: str | None = None) -> FastAPI:
    """Build the app around one scorer; `load_error` turns /score into 503s."""
    app = FastAPI(title="clip-sidecar")

    @app.exception_handler(RequestValidationError)
    async def _validation(request: Request, exc: RequestValidationError):
        return _error(400, f"malformed request: {exc.errors()[:1]}")

    @app.post("/score")
    def score(body: ScoreRequest, request: Request, response: Response):
        response.headers[PROTO_HEADER] = PROTOCOL_VERSION
        version = request.headers.get(PROTO_HEADER)
        if version is not None and version != PROTOCOL_VERSION:
            return _error(400, f"unsupported protocol version {version!r}")
        if scorer is None:
            return _error(503, load_error or "no model loaded")
        if body.width < 1 or body.height < 1:
            return _error(400, f"bad dimensions {body.width}x{body.height}")
        if scorer.requires_prompt and not body.prompt.strip():
            return _error(400, "this model needs a non-empty prompt")

        try:
            raw = base64.b64decode(body.pixels_b64, validate=True)
        except Exception as exc:
            return _error(400, f"undecodable pixels_b64: {exc}")
        expected = body.height * body.width * 3
        flat = np.frombuffer(raw, dtype="<f4")
        if flat.size != expected:
            return _error(400, f"payload holds {flat.size} floats, expected {expected}")
        pixels = flat.reshape(body.height, body.width, 3).astype(np.float64)
        if not np.all(np.isfinite(pixels)):
            return _error(400, "pixels contain NaN or Inf")

        try:
            loss, grad = scorer.score(pixels, body.prompt, body.need_grad)
        except ValueError as exc:
            return _error(400, str(exc))
        if not math.isfinite(loss) or (grad is not None and not np.all(np.isfinite(grad))):
            log.error("scorer %s produced non-finite output", scorer.name)
            return _error(500, "scorer produced non-finite values")

        payload = {"loss": loss}
        if body.need_grad:
            payload["grad_b64"] = base64.b64encode(
                np.ascontiguousarray(grad, dtype="<f4").tobytes()
            ).decode("ascii")
        return payload

    return app
