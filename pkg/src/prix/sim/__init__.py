"""Synthetic scenes, camera-like rendering and driving scores."""
