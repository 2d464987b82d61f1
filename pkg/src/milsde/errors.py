"""Exception types shared across the package.

Callers distinguish three failure families: misuse of an interface
(:class:`UsageError`), a numeric blow-up inside a scheme step
(:class:`StepOverflow`, a signal rather than a hard error), and
resource or experiment-level failures.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "UsageError",
    "ResourceError",
    "StepOverflow",
    "ExperimentError",
]


class UsageError(ValueError):
    """An interface was called with arguments that violate its contract."""


class ResourceError(RuntimeError):
    """A request would exceed a sane resource budget (e.g. path memory)."""


class StepOverflow(RuntimeError):
    """A scheme step produced a non-finite state.

    This is a signal, not a crash: integrators catch it and mark the
    trajectory divergent, and the experiment harness counts the path as
    an infinite-error sample. The offending state is attached so callers
    can inspect it.
    """

    def __init__(self, state: np.ndarray, message: str = "scheme step produced a non-finite state"):
        super().__init__(message)
        self.state = state


class ExperimentError(RuntimeError):
    """An experiment cannot produce a meaningful result (e.g. the reference solve diverged)."""
