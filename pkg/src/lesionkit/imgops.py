"""Raster helpers: resize, channel normalization, binarization, hole filling.

Conventions used across the package:

* RGB images are ``(H, W, 3)`` arrays, either ``uint8`` or float in [0, 1].
* Binary masks are ``(H, W)`` boolean arrays.
* Probability masks are ``(H, W)`` float arrays with values in [0, 1].
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

PROB_PNG_SCALE = 65535


def as_float_image(img: np.ndarray) -> np.ndarray:
    """Return ``img`` as float64 in [0, 1]; uint8 input is divided by 255."""
    img = np.asarray(img)
    if img.dtype == np.uint8:
        return img.astype(np.float64) / 255.0
    return img.astype(np.float64, copy=False)


def to_uint8(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.dtype == np.uint8:
        return img
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def _axis_coords(n_in: int, n_out: int):
    # half-pixel-center sampling: src = (dst + 0.5) * n_in / n_out - 0.5
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def _nearest_index(n_in: int, n_out: int) -> np.ndarray:
    idx = np.floor((np.arange(n_out) + 0.5) * (n_in / n_out)).astype(int)
    return np.clip(idx, 0, n_in - 1)


def resize(img: np.ndarray, w: int, h: int, mode: str = "bilinear") -> np.ndarray:
    """Resize an image or mask to width ``w`` and height ``h``.

    Bilinear sampling uses half-pixel centers with edge clamping, so a 2x1
    row ``[0, 1]`` stretched to 4 pixels becomes ``[0, .25, .75, 1]``.
    Boolean masks only accept ``mode="nearest"``. The output dtype matches
    the input (uint8 results are rounded).
    """
    img = np.asarray(img)
    if w < 1 or h < 1:
        raise ValueError(f"target size must be positive, got {w}x{h}")
    if mode not in ("bilinear", "nearest"):
        raise ValueError(f"unknown resize mode {mode!r}")
    if img.dtype == bool and mode == "bilinear":
        raise ValueError("binary masks must be resized with mode='nearest'")
    in_h, in_w = img.shape[:2]
    if (in_h, in_w) == (h, w):
        return img.copy()

    if mode == "nearest":
        rows = _nearest_index(in_h, h)
        cols = _nearest_index(in_w, w)
        return img[rows][:, cols]

    y0, y1, fy = _axis_coords(in_h, h)
    x0, x1, fx = _axis_coords(in_w, w)
    data = img.astype(np.float64)
    if data.ndim == 3:
        fy = fy[:, None, None]
        fx = fx[None, :, None]
    else:
        fy = fy[:, None]
        fx = fx[None, :]
    top = data[y0][:, x0] * (1 - fx) + data[y0][:, x1] * fx
    bottom = data[y1][:, x0] * (1 - fx) + data[y1][:, x1] * fx
    out = top * (1 - fy) + bottom * fy
    if img.dtype == np.uint8:
        return np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return out.astype(img.dtype, copy=False)


def channel_stats(images) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and standard deviation pooled over all pixels of ``images``."""
    total = np.zeros(3)
    total_sq = np.zeros(3)
    count = 0
    for img in images:
        px = as_float_image(img).reshape(-1, 3)
        total += px.sum(axis=0)
        total_sq += (px**2).sum(axis=0)
        count += px.shape[0]
    if count == 0:
        raise ValueError("no pixels to compute channel statistics from")
    mean = total / count
    std = np.sqrt(np.maximum(total_sq / count - mean**2, 0.0))
    return mean, std


def normalize_channels(img: np.ndarray, mean, std) -> np.ndarray:
    """Channel-wise ``(img - mean) / std`` on the float version of ``img``."""
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    if np.any(std <= 0):
        raise ValueError(f"channel std must be positive, got {std.tolist()}")
    return (as_float_image(img) - mean) / std


def denormalize_channels(img: np.ndarray, mean, std) -> np.ndarray:
    return np.asarray(img) * np.asarray(std, dtype=np.float64) + np.asarray(mean, dtype=np.float64)


def binarize(p: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Pixels with probability ``>= threshold`` become foreground."""
    if not 0 < threshold < 1:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    return np.asarray(p) >= threshold


def fill_holes(mask: np.ndarray) -> np.ndarray:
    """Fill background regions that are not 4-connected to the image border."""
    mask = np.asarray(mask, dtype=bool)
    # scipy's default structuring element is the 4-neighbour cross
    return ndimage.binary_fill_holes(mask)


def postprocess_segmentation(prob_masks, out_size: tuple[int, int], threshold: float = 0.5,
                             order: str = "binarize-first") -> np.ndarray:
    """Average model probability masks and turn the result into a final mask.

    ``out_size`` is ``(width, height)`` of the original image. With
    ``order="binarize-first"`` the averaged mask is thresholded and hole-filled
    at model resolution, then upsampled with nearest neighbour; with
    ``order="upsample-first"`` the probability map is upsampled bilinearly first.
    """
    from .ensemble import mean_ensemble_masks

    avg = mean_ensemble_masks(prob_masks)
    w, h = out_size
    if order == "binarize-first":
        return resize(fill_holes(binarize(avg, threshold)), w, h, mode="nearest")
    if order == "upsample-first":
        return fill_holes(binarize(resize(avg, w, h, mode="bilinear"), threshold))
    raise ValueError(f"unknown post-processing order {order!r}")


# PNG I/O ------------------------------------------------------------------

def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def write_image(path, img: np.ndarray) -> None:
    Image.fromarray(to_uint8(img)).save(path)


def read_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) > 127


def write_mask(path, mask: np.ndarray) -> None:
    Image.fromarray(np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)).save(path)


def read_prob_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        data = np.asarray(im)
    if data.dtype == np.uint8:
        return data.astype(np.float64) / 255.0
    return data.astype(np.float64) / PROB_PNG_SCALE


def write_prob_mask(path, p: np.ndarray) -> None:
    p = np.asarray(p, dtype=np.float64)
    if p.size and (p.min() < 0 or p.max() > 1):
        raise ValueError("probability mask values must lie in [0, 1]")
    Image.fromarray(np.rint(p * PROB_PNG_SCALE).astype(np.uint16)).save(Path(path))
