"""
Frame and mask rendering to binary PGM/PPM images.

Labels map to a fixed 14-colour ramp (or grey levels); invalid pixels are
drawn in a neutral grey and masks are painted on top in a colour that does
not occur in the ramp.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .grid import N_LABELS, PixelMask, RadarFrame, check_same_grid

__all__ = ["LABEL_RAMP", "INVALID_COLOR", "OVERLAY_COLOR", "frame_to_rgb", "render", "write_pnm"]

# white background, then blue -> green -> yellow -> red -> purple by intensity
LABEL_RAMP = np.array([
    [255, 255, 255],
    [200, 230, 255],
    [150, 200, 255],
    [90, 150, 240],
    [40, 100, 220],
    [60, 190, 90],
    [20, 150, 50],
    [240, 240, 60],
    [240, 190, 30],
    [240, 130, 20],
    [230, 60, 30],
    [190, 20, 40],
    [150, 30, 140],
    [100, 20, 110],
], dtype=np.uint8)
INVALID_COLOR = np.array([128, 128, 128], dtype=np.uint8)
OVERLAY_COLOR = np.array([255, 0, 255], dtype=np.uint8)


def frame_to_rgb(frame: RadarFrame, masks=(), color: bool = True) -> np.ndarray:
    """``(h, w, 3)`` or ``(h, w)`` uint8 image of a frame with masks overlaid."""
    if color:
        img = LABEL_RAMP[frame.labels]
        img[~frame.valid] = INVALID_COLOR
    else:
        img = (frame.labels.astype(np.uint16) * 255 // (N_LABELS - 1)).astype(np.uint8)
        img[~frame.valid] = 128
    for m in masks:
        check_same_grid(frame, m)
        img[m.bits] = OVERLAY_COLOR if color else 255
    return img


def write_pnm(image: np.ndarray, path) -> None:
    """Write a ``(h, w)`` image as P5 or a ``(h, w, 3)`` image as P6."""
    image = np.ascontiguousarray(image, dtype=np.uint8)
    if image.ndim == 2:
        magic = "P5"
    elif image.ndim == 3 and image.shape[2] == 3:
        magic = "P6"
    else:
        raise ValueError(f"cannot write image of shape {image.shape}")
    h, w = image.shape[:2]
    Path(path).write_bytes(f"{magic}\n{w} {h}\n255\n".encode("ascii") + image.tobytes())


def render(item: RadarFrame | PixelMask, path, masks=(), color: bool | None = None) -> None:
    """Render a frame (optionally with overlays) or a bare mask to ``path``.

    A bare mask is drawn as black on white. ``color`` defaults to True for
    ``.ppm`` paths and False for ``.pgm``.
    """
    if color is None:
        color = Path(path).suffix.lower() != ".pgm"
    if isinstance(item, PixelMask):
        grey = np.where(item.bits, 0, 255).astype(np.uint8)
        img = np.repeat(grey[:, :, None], 3, axis=2) if color else grey
    else:
        img = frame_to_rgb(item, masks, color)
    write_pnm(img, path)
