from __future__ import annotations


class InstabilityError(RuntimeError):
    """Raised when an explicit update produces non-finite or strongly negative states."""
