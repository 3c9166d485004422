import logging
from importlib import import_module
from typing import Any, List

from app.env import GCSF_CALLBACK_MODULE_NAME

logger = logging.getLogger(__name__)

# ----------------------------
# Snapshot callbacks
# ----------------------------

_handlers: List[Any] = []

if GCSF_CALLBACK_MODULE_NAME is not None:
    callback_module = import_module(GCSF_CALLBACK_MODULE_NAME)
    _handlers.append(callback_module.CallbackHandler())


def register_callback(handler: Any) -> None:
    _handlers.append(handler)


def unregister_callback(handler: Any) -> None:
    if handler in _handlers:
        _handlers.remove(handler)


def notify_snapshot(kind: str, t: float, state: Any) -> None:
    for handler in list(_handlers):
        hook = getattr(handler, "on_snapshot", None)
        if hook is None:
            continue
        try:
            hook(kind, t, state)
        except Exception as e:
            # Plug-in failures are logged, never raised
            logger.exception(f"Snapshot callback failed at t={t}: {e}")


def notify_finish(kind: str, trajectory: Any) -> None:
    for handler in list(_handlers):
        hook = getattr(handler, "on_finish", None)
        if hook is None:
            continue
        try:
            hook(kind, trajectory)
        except Exception as e:
            logger.exception(f"Finish callback failed: {e}")
