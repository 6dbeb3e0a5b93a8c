"""HTTP service around the linking sessions and the evaluation harness."""

from __future__ import annotations

from .app import create_app

__all__ = ["create_app"]
