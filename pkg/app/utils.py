import json
import logging
import time
import uuid
from typing import Any

from .config import settings


class WorkbenchError(Exception):
    """Base class for every domain failure; carries an exit status and a kind."""

    kind = "workbench_error"
    status = 1

    def __init__(self, message: str, details: dict[str, Any] | None = None) -> None:
        super().__init__(message)
        self.message = message
        self.details = details or {}


class ParseError(WorkbenchError):
    """Raised when an input document does not match its schema."""

    kind = "parse_error"
    status = 2


class BudgetExhaustedError(WorkbenchError):
    """Raised when a search runs out of budget. Not a refutation."""

    kind = "budget_exhausted"
    status = 3

    def __init__(
        self,
        message: str,
        details: dict[str, Any] | None = None,
        partial: dict[str, Any] | None = None,
    ) -> None:
        super().__init__(message, details)
        self.partial = partial


class PrecisionExhaustedError(BudgetExhaustedError):
    kind = "precision_exhausted"


class PEqualsTwoError(WorkbenchError):
    """Raised when the exponent cannot be certified different from 2."""

    kind = "p_equals_two"
    status = 4


class ExponentMismatchError(WorkbenchError):
    kind = "exponent_mismatch"
    status = 4


class NegativeInputError(WorkbenchError, ValueError):
    kind = "negative_input"


class ModulusViolationError(WorkbenchError):
    kind = "modulus_violation"


class SimplicityViolationError(WorkbenchError):
    kind = "simplicity_violation"


class DomainShapeError(WorkbenchError):
    kind = "domain_shape"


class ChainViolationError(WorkbenchError):
    kind = "chain_violation"


class ZeroNormError(WorkbenchError):
    kind = "zero_norm"


class RootNormError(WorkbenchError):
    kind = "root_norm"


class IsoCertificationError(WorkbenchError):
    kind = "iso_certification"


class PresentationError(WorkbenchError):
    """Raised on oracle contract violations or white-box access to an oracle."""

    kind = "presentation_error"


class JsonLineFormatter(logging.Formatter):
    """Render a record as one JSON object per line."""

    def format(self, record: logging.LogRecord) -> str:
        payload = {
            "ts": int(record.created),
            "level": record.levelname.lower(),
            "event": record.getMessage(),
        }
        payload.update(getattr(record, "fields", {}))
        return json.dumps(payload, sort_keys=True, default=str)


def get_logger() -> logging.Logger:
    """Return the package logger, configured once from settings."""
    logger = logging.getLogger("lp_workbench")
    if not logger.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(JsonLineFormatter())
        logger.addHandler(handler)
        logger.propagate = False
    logger.setLevel(settings.log_level.upper())
    return logger


def log_event(event: str, level: int = logging.INFO, **fields: Any) -> None:
    """Emit a structured event."""
    get_logger().log(level, event, extra={"fields": fields})


def get_request_id() -> str:
    """Generate a unique request ID."""
    return str(uuid.uuid4())


def elapsed_ms(start: float) -> int:
    """Calculate elapsed milliseconds from start time."""
    return int((time.perf_counter() - start) * 1000)
