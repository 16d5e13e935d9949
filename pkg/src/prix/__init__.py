"""PRIX: camera-only end-to-end planning at desk scale."""

__version__ = "0.1.0"
