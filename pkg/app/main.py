"""L^p workbench API – FastAPI entrypoint"""

from __future__ import annotations

import logging
import time
from typing import Any

from fastapi import FastAPI
from fastapi import Request
from fastapi.encoders import jsonable_encoder
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from fastapi.responses import RedirectResponse
from starlette.middleware.base import BaseHTTPMiddleware

from .cache import StageStore
from .cli import execute
from .config import settings
from .models import ErrorResponse
from .models import JobRequest
from .models import Report
from .models import Verb
from .utils import BudgetExhaustedError
from .utils import ParseError
from .utils import WorkbenchError
from .utils import elapsed_ms
from .utils import get_request_id
from .utils import log_event

MAX_BODY_BYTES = 4 * 1024 * 1024

error_responses = {
    400: {"model": ErrorResponse, "description": "Bad Request - input documents do not parse"},
    409: {"model": ErrorResponse, "description": "Conflict - search budget exhausted; details carry the partial report"},
    422: {"model": ErrorResponse, "description": "Unprocessable - p = 2, exponent mismatch or another domain failure"},
    500: {"model": ErrorResponse, "description": "Internal Server Error - Server-side error"},
}

TAGS_METADATA = [
    {"name": "Health", "description": "Health check endpoint"},
    {"name": "Jobs", "description": "sigma tests, disintegration and isometry synthesis, verification"},
]

APP_DESCRIPTION = """
L^p workbench API

Certified computations on presentations of L^p spaces: sigma enclosures,
staged disintegration synthesis, isometry synthesis between presentations
and independent re-verification of reports. Every number in a report is an
exact rational or a rational enclosure.

Example cURL:

    curl -X POST 'http://localhost:8000/v1/jobs/disintegrate' \
      -H 'Content-Type: application/json' \
      -d '{"documents":[{"p":"1","kind":"standard_dyadic"}],"budget":2}'

Errors: 400, 409, 422, 500
"""

app = FastAPI(
    title="L^p workbench API",
    version="0.1.0",
    description=APP_DESCRIPTION,
    openapi_tags=TAGS_METADATA,
    license_info={"name": "MIT"},
)

start_time = time.time()


def _http_status(exc: WorkbenchError) -> int:
    if isinstance(exc, ParseError):
        return 400
    if isinstance(exc, BudgetExhaustedError):
        return 409
    # p = 2, exponent mismatch and the other domain failures
    return 422


def _envelope(kind: str, message: str, status: int, details: Any = None) -> JSONResponse:
    return JSONResponse(
        status_code=status,
        content=jsonable_encoder(
            {"error": {"type": kind, "message": message, "status": status, "details": details}}
        ),
    )


@app.get("/", include_in_schema=False)
def root():
    return RedirectResponse(url="/docs", status_code=302)


# Routes
@app.get("/v1/health", tags=["Health"], responses={200: {"description": "API is healthy"}, **error_responses})
def health():
    entries, size = StageStore.at(settings.cache_dir).footprint()
    return {
        "ok": True,
        "uptime_s": int(time.time() - start_time),
        "stage_cache_entries": entries,
        "stage_cache_bytes": size,
    }


@app.post(
    "/v1/jobs/{verb}",
    tags=["Jobs"],
    response_model=Report,
    response_model_exclude_none=True,
    responses={200: {"model": Report, "description": "The job report"}, **error_responses},
)
def run_job(verb: Verb, req: JobRequest) -> Report:
    # sync handler: FastAPI runs it in the threadpool, searches are CPU bound
    return execute(verb, req.documents, req.precision, req.budget, req.strategy, req.seed)


# Exception handlers
@app.exception_handler(WorkbenchError)
async def _workbench_handler(request: Request, exc: WorkbenchError):
    details = dict(exc.details)
    if isinstance(exc, BudgetExhaustedError) and exc.partial:
        details["partial"] = exc.partial
    return _envelope(exc.kind, exc.message, _http_status(exc), details or None)


@app.exception_handler(RequestValidationError)
async def _validation_handler(request: Request, exc: RequestValidationError):
    return _envelope("parse_error", "request body does not match the schema", 400, {"errors": exc.errors()})


@app.exception_handler(Exception)
async def _fallback_handler(request: Request, exc: Exception):
    log_event("unhandled_error", level=logging.ERROR, error=type(exc).__name__)
    return _envelope("internal_error", "unexpected error", 500)


# Middlewares: security + request-id + body size
class SecurityMiddleware(BaseHTTPMiddleware):
    async def dispatch(self, request: Request, call_next):
        response = await call_next(request)
        response.headers.setdefault("X-Content-Type-Options", "nosniff")
        response.headers.setdefault("Referrer-Policy", "no-referrer")
        return response


class RequestIDMiddleware(BaseHTTPMiddleware):
    async def dispatch(self, request: Request, call_next):
        request_id = request.headers.get("X-Request-ID") or get_request_id()
        start = time.perf_counter()
        response = await call_next(request)
        response.headers.setdefault("X-Request-ID", request_id)
        log_event(
            "request",
            rid=request_id,
            method=request.method,
            path=request.url.path,
            status=response.status_code,
            lat_ms=elapsed_ms(start),
        )
        return response


class BodySizeLimit(BaseHTTPMiddleware):
    def __init__(self, app, max_bytes: int = MAX_BODY_BYTES):
        super().__init__(app)
        self.max_bytes = max_bytes

    async def dispatch(self, request: Request, call_next):
        cl = request.headers.get("content-length")
        if cl and cl.isdigit() and int(cl) > self.max_bytes:
            return _envelope("payload_too_large", "body too large", 413)
        return await call_next(request)


app.add_middleware(SecurityMiddleware)
app.add_middleware(RequestIDMiddleware)
app.add_middleware(BodySizeLimit, max_bytes=MAX_BODY_BYTES)


if __name__ == "__main__":
    import uvicorn

    uvicorn.run("app.main:app", host=settings.app_host, port=settings.app_port)
