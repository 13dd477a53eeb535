"""Coupled watershed-pond-channel plant with reactive and predictive valve control."""
from __future__ import annotations

__version__ = "0.1.0"
