"""Heatmap rendering of activation maps (a lightweight stand-in for
gradient-based part visualization: maps are bilinearly upsampled to image
resolution and color-mapped)."""

from __future__ import annotations

import numpy as np
from PIL import Image

# piecewise-linear black -> red -> yellow -> white ramp over t in [0, 1]
COLORMAP_NAME = "black-red-yellow-white"
COLORMAP_FORMULA = {
    "red": "clip(3t, 0, 1)",
    "green": "clip(3t - 1, 0, 1)",
    "blue": "clip(3t - 2, 0, 1)",
}


def bilinear_upsample(m: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize a 2-D float map with bilinear interpolation."""
    img = Image.fromarray(np.asarray(m, dtype=np.float32), mode="F")
    return np.asarray(img.resize((out_w, out_h), Image.BILINEAR), dtype=np.float64)


def heat_rgb(m: np.ndarray, vmax: float | None = None) -> np.ndarray:
    """Map values in [0, vmax] to uint8 RGB via the documented ramp."""
    arr = np.asarray(m, dtype=np.float64)
    top = float(arr.max()) if vmax is None else vmax
    t = arr / top if top > 0 else np.zeros_like(arr)
    channels = [np.clip(3.0 * t - shift, 0.0, 1.0) for shift in (0.0, 1.0, 2.0)]
    return (np.stack(channels, axis=-1) * 255.0).round().astype(np.uint8)


def heatmap_png(m: np.ndarray, out_h: int, out_w: int, vmax: float) -> bytes:
    rgb = heat_rgb(bilinear_upsample(m, out_h, out_w), vmax=vmax)
    return _encode_png(rgb)


def overlay_png(image_path, m: np.ndarray, out_h: int, out_w: int, vmax: float) -> bytes:
    base = Image.open(image_path).convert("RGB").resize((out_w, out_h), Image.BILINEAR)
    heat = heat_rgb(bilinear_upsample(m, out_h, out_w), vmax=vmax)
    blended = (0.55 * np.asarray(base, dtype=np.float64) + 0.45 * heat).round().astype(np.uint8)
    return _encode_png(blended)


def _encode_png(rgb: np.ndarray) -> bytes:
    import io

    buf = io.BytesIO()
    Image.fromarray(rgb, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()
