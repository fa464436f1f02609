"""2D attention heatmaps: max-fused Gaussian kernels around projected samples."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .body import WeakPerspectiveCamera
from .geometry import Polyline3


@dataclass
class HeatmapStack:
    names: list[str]
    images: np.ndarray  # (C, H, W), values in [0, 1]
    width: int
    height: int

    def channel(self, name: str) -> np.ndarray:
        return self.images[self.names.index(name)]


def _to_pixels(points3d: np.ndarray, camera: WeakPerspectiveCamera,
               width: int, height: int) -> np.ndarray:
    """Normalized camera coords ([-1, 1] span) to pixel centers; y flips down."""
    uv = camera.project(points3d)
    px = (uv[:, 0] + 1.0) * 0.5 * (width - 1)
    py = (1.0 - (uv[:, 1] + 1.0) * 0.5) * (height - 1)
    return np.stack([px, py], axis=1)


def _channel_image(samples_px: np.ndarray, width: int, height: int,
                   sigma: float) -> np.ndarray:
    """max over samples of exp(-|q - sample|^2 / (2 sigma^2)) at each pixel.

    The max of monotone kernels is the kernel of the nearest sample, so one
    nearest-neighbor query per pixel evaluates the fused map exactly.
    """
    img = np.zeros((height, width))
    on_screen = samples_px[
        (samples_px[:, 0] > -4 * sigma) & (samples_px[:, 0] < width - 1 + 4 * sigma) &
        (samples_px[:, 1] > -4 * sigma) & (samples_px[:, 1] < height - 1 + 4 * sigma)]
    if len(on_screen) == 0:
        return img
    pad = int(np.ceil(4 * sigma))
    x0 = max(int(np.floor(on_screen[:, 0].min())) - pad, 0)
    x1 = min(int(np.ceil(on_screen[:, 0].max())) + pad, width - 1)
    y0 = max(int(np.floor(on_screen[:, 1].min())) - pad, 0)
    y1 = min(int(np.ceil(on_screen[:, 1].max())) + pad, height - 1)
    xs = np.arange(x0, x1 + 1)
    ys = np.arange(y0, y1 + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    pixels = np.stack([gx.ravel(), gy.ravel()], axis=1).astype(np.float64)
    d, _ = cKDTree(on_screen).query(pixels)
    img[gy.ravel(), gx.ravel()] = np.exp(-d**2 / (2.0 * sigma * sigma))
    return img


def render_heatmaps(entities: list[tuple[str, object]], camera: WeakPerspectiveCamera,
                    width: int, height: int, sigma: float = 2.0) -> HeatmapStack:
    """One channel per (name, entity); entity is a Polyline3, a list of them,
    or an (N, 3) array of surface sample points.

    Polylines are resampled so projected samples sit at most half a pixel
    apart; kernels use sigma in pixels and fuse with max, never sum.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    pixels_per_unit = camera.s * 0.5 * (min(width, height) - 1)
    spacing3d = 0.5 / pixels_per_unit
    names = []
    images = []
    for name, entity in entities:
        if isinstance(entity, Polyline3):
            pts = entity.resampled(spacing3d)
        elif isinstance(entity, (list, tuple)):
            pts = np.concatenate([p.resampled(spacing3d) for p in entity], axis=0)
        else:
            pts = np.asarray(entity, dtype=np.float64)
        samples_px = _to_pixels(pts, camera, width, height)
        names.append(name)
        images.append(_channel_image(samples_px, width, height, sigma))
    return HeatmapStack(names, np.stack(images, axis=0), width, height)


def save_pgm16(path, image: np.ndarray) -> None:
    """16-bit binary PGM (big-endian sample order per the format)."""
    scaled = np.clip(np.round(image * 65535.0), 0, 65535).astype(">u2")
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(scaled.tobytes())


def load_pgm16(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = (int(tok) for tok in parts[1].split())
    maxval = int(parts[2])
    raw = np.frombuffer(parts[3][: w * h * 2], dtype=">u2").reshape(h, w)
    return raw.astype(np.float64) / maxval
