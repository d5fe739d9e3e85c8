"""HTTP control service wrapping the library for UI and remote clients."""

from .app import create_app

__all__ = ["create_app"]
