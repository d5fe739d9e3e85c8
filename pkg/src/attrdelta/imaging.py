"""Rendering toy samples as grayscale PNGs.

The toy backbone's samples are small vectors; for CLI output and the
browser UI each vector is rendered as vertical bands, one band per
component, squashed to [0, 255] with a fixed sigmoid so rendering is
deterministic and bounded for any sample.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image


def sample_to_array(sample: np.ndarray, size: int = 64) -> np.ndarray:
    """(m,) sample vector -> (size, size) uint8 band image."""
    vec = np.asarray(sample, dtype=np.float64).ravel()
    levels = np.round(255.0 / (1.0 + np.exp(-vec / 4.0))).astype(np.uint8)
    bands = np.repeat(levels, _band_widths(vec.size, size))
    return np.tile(bands, (size, 1))


def _band_widths(m: int, size: int) -> np.ndarray:
    base = size // m
    widths = np.full(m, base, dtype=int)
    widths[: size - base * m] += 1
    return widths


def sample_to_png_bytes(sample: np.ndarray, size: int = 64) -> bytes:
    img = Image.fromarray(sample_to_array(sample, size), mode="L")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def save_sample_png(sample: np.ndarray, path: str | Path, size: int = 64) -> None:
    Path(path).write_bytes(sample_to_png_bytes(sample, size))
