"""Small deterministic image helpers shared by the generator and augmenter.

Images are float32 (3, H, W) in [0, 1]. Everything here is plain numpy so
the whole pipeline stays bit-reproducible.
"""

from __future__ import annotations

import math

import numpy as np


def upsample_field(field: np.ndarray, h: int, w: int) -> np.ndarray:
    """Bilinear upsample of a 2-D field to (h, w)."""
    gh, gw = field.shape
    ys = np.linspace(0.0, gh - 1.0, h)
    xs = np.linspace(0.0, gw - 1.0, w)
    return _sample_bilinear_grid(field, ys[:, None].repeat(w, 1),
                                 xs[None, :].repeat(h, 0))


def _sample_bilinear_grid(field: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    gh, gw = field.shape[-2:]
    ys = np.clip(ys, 0.0, gh - 1.0)
    xs = np.clip(xs, 0.0, gw - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, gh - 1)
    x1 = np.minimum(x0 + 1, gw - 1)
    fy = (ys - y0).astype(np.float32)
    fx = (xs - x0).astype(np.float32)
    if field.ndim == 2:
        v00, v01 = field[y0, x0], field[y0, x1]
        v10, v11 = field[y1, x0], field[y1, x1]
    else:  # (C, H, W): sample every channel at the same coordinates
        v00, v01 = field[:, y0, x0], field[:, y0, x1]
        v10, v11 = field[:, y1, x0], field[:, y1, x1]
    top = v00 * (1 - fx) + v01 * fx
    bot = v10 * (1 - fx) + v11 * fx
    return (top * (1 - fy) + bot * fy).astype(np.float32)


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize (C, H, W) to (C, out_h, out_w); endpoints align to corners."""
    _, h, w = img.shape
    ys = np.linspace(0.0, h - 1.0, out_h)
    xs = np.linspace(0.0, w - 1.0, out_w)
    return _sample_bilinear_grid(img, ys[:, None].repeat(out_w, 1),
                                 xs[None, :].repeat(out_h, 0))


def rotate_bilinear(img: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate (C, H, W) about its center; out-of-frame samples clamp to edge."""
    _, h, w = img.shape
    theta = math.radians(degrees)
    c, s = math.cos(theta), math.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float32),
                         np.arange(w, dtype=np.float32), indexing="ij")
    dy, dx = yy - cy, xx - cx
    src_y = c * dy + s * dx + cy   # inverse rotation
    src_x = -s * dy + c * dx + cx
    return _sample_bilinear_grid(img, src_y, src_x)


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable gaussian blur of (C, H, W) with edge padding."""
    if sigma <= 0:
        return img
    radius = max(1, int(math.ceil(3.0 * sigma)))
    xs = np.arange(-radius, radius + 1, dtype=np.float32)
    kernel = np.exp(-(xs * xs) / np.float32(2.0 * sigma * sigma))
    kernel /= kernel.sum()
    out = img
    for axis in (1, 2):
        pad = [(0, 0)] * 3
        pad[axis] = (radius, radius)
        padded = np.pad(out, pad, mode="edge")
        acc = np.zeros_like(out)
        for i, kv in enumerate(kernel):
            sl = [slice(None)] * 3
            sl[axis] = slice(i, i + out.shape[axis])
            acc += kv * padded[tuple(sl)]
        out = acc
    return out


def quantize8(img: np.ndarray) -> np.ndarray:
    """Round to the 8-bit grid so in-memory frames equal their disk roundtrip."""
    return (np.round(np.clip(img, 0.0, 1.0) * 255.0) / np.float32(255.0)).astype(np.float32)
