"""Optional OpenTelemetry spans; every helper degrades to a no-op without the SDK."""

from __future__ import annotations

import logging
import uuid
from collections.abc import Generator
from contextlib import AbstractContextManager, contextmanager
from importlib import import_module
from typing import Any

logger = logging.getLogger("facefill.telemetry")

trace: Any | None = None
try:
    trace = import_module("opentelemetry.trace")
    _HAS_OTEL = True
except Exception:
    _HAS_OTEL = False

_TRACER_NAME = "facefill"


def _get_tracer() -> Any:
    if _HAS_OTEL and trace is not None:
        return trace.get_tracer(_TRACER_NAME)
    return None


def generate_run_id() -> str:
    """UUID4 correlating the log records and reports of one training or evaluation run."""
    return str(uuid.uuid4())


def _tracing_failed(name: str, exc: BaseException) -> None:
    logger.debug("Tracing disabled for span '%s': %s", name, exc)


def _open_span(name: str, attributes: dict[str, Any] | None) -> AbstractContextManager[Any] | None:
    try:
        tracer = _get_tracer()
        if tracer is None:
            return None
        context: AbstractContextManager[Any] = tracer.start_as_current_span(
            name, attributes=attributes or {}
        )
        return context
    except Exception as exc:
        _tracing_failed(name, exc)
        return None


@contextmanager
def trace_span(
    name: str,
    attributes: dict[str, Any] | None = None,
) -> Generator[Any, None, None]:
    """Run the block inside span ``name`` (e.g. "trainer/joint_step").

    Yields the span, or None when tracing is unavailable. Tracer failures are
    logged at DEBUG; exceptions raised by the block propagate unchanged.
    """
    context = _open_span(name, attributes)
    if context is None:
        yield None
        return
    try:
        span = context.__enter__()
    except Exception as exc:
        _tracing_failed(name, exc)
        yield None
        return

    error: BaseException | None = None
    try:
        yield span
    except BaseException as exc:
        error = exc
        raise
    finally:
        try:
            if error is None:
                context.__exit__(None, None, None)
            else:
                context.__exit__(type(error), error, error.__traceback__)
        except Exception as exit_exc:
            _tracing_failed(name, exit_exc)


def set_span_attributes(span: Any, attributes: dict[str, Any]) -> None:
    """Attach attributes to a span yielded by ``trace_span``; no-op for ``None``."""
    if span is None:
        return
    for key, value in attributes.items():
        try:
            span.set_attribute(key, value)
        except Exception as exc:
            _tracing_failed(key, exc)
