"""Training augmentation, test-time replicas and replica averaging.

Geometric operations are applied in a fixed order (crop, flip, rotate,
shear, scale) and composed into one affine warp, followed by color jitter
(brightness, contrast, saturation, hue). Pixels that fall outside the
source image are filled by half-sample symmetric reflection.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np
from scipy import ndimage
from skimage.color import hsv2rgb, rgb2hsv

from .config import parse_bool, read_kv, write_kv
from .ensemble import stable_mean
from .imgops import as_float_image, to_uint8

Range = tuple[float, float]

_RANGE_FIELDS = ("crop_area", "crop_aspect", "rotation", "shear", "area_scale",
                 "saturation", "brightness", "contrast", "hue")


@dataclass(frozen=True)
class AugmentSpec:
    crop_area: Range = (0.4, 1.0)
    crop_aspect: Range = (3 / 4, 4 / 3)
    hflip: bool = True
    vflip: bool = True
    rotation: Range = (0.0, 90.0)
    shear: Range = (0.0, 20.0)
    area_scale: Range = (0.8, 1.2)
    saturation: Range = (0.7, 1.3)
    brightness: Range = (0.7, 1.3)
    contrast: Range = (0.7, 1.3)
    hue: Range = (-0.05, 0.05)

    def __post_init__(self):
        for name in _RANGE_FIELDS:
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: empty range ({lo}, {hi})")
        if self.crop_area[0] <= 0 or self.crop_area[1] > 1:
            raise ValueError("crop_area must lie in (0, 1]")
        if self.crop_aspect[0] <= 0 or self.area_scale[0] <= 0:
            raise ValueError("crop_aspect and area_scale must be positive")

    @classmethod
    def identity(cls) -> "AugmentSpec":
        return cls(crop_area=(1.0, 1.0), crop_aspect=(1.0, 1.0), hflip=False, vflip=False,
                   rotation=(0.0, 0.0), shear=(0.0, 0.0), area_scale=(1.0, 1.0),
                   saturation=(1.0, 1.0), brightness=(1.0, 1.0), contrast=(1.0, 1.0),
                   hue=(0.0, 0.0))

    def flips_color_only(self) -> "AugmentSpec":
        """Same flips and color jitter, all other geometry disabled (keeps patches centered)."""
        return replace(self, crop_area=(1.0, 1.0), crop_aspect=(1.0, 1.0), rotation=(0.0, 0.0),
                       shear=(0.0, 0.0), area_scale=(1.0, 1.0))

    def to_kv(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in _RANGE_FIELDS:
                out[f"{f.name}_min"], out[f"{f.name}_max"] = float(v[0]), float(v[1])
            else:
                out[f.name] = v
        return out

    @classmethod
    def from_kv(cls, kv: dict) -> "AugmentSpec":
        kwargs = {}
        base = cls()
        for name in _RANGE_FIELDS:
            lo, hi = getattr(base, name)
            kwargs[name] = (float(kv.get(f"{name}_min", lo)), float(kv.get(f"{name}_max", hi)))
        for name in ("hflip", "vflip"):
            if name in kv:
                kwargs[name] = parse_bool(str(kv[name]))
        return cls(**kwargs)


def save_spec(path, spec: AugmentSpec) -> None:
    write_kv(path, spec.to_kv())


def load_spec(path) -> AugmentSpec:
    return AugmentSpec.from_kv(read_kv(path))


@dataclass(frozen=True)
class SampledAugmentation:
    crop_area: float = 1.0
    crop_aspect: float = 1.0
    crop_x: float = 0.5
    crop_y: float = 0.5
    hflip: bool = False
    vflip: bool = False
    rotation: float = 0.0
    shear: float = 0.0
    area_scale: float = 1.0
    saturation: float = 1.0
    brightness: float = 1.0
    contrast: float = 1.0
    hue: float = 0.0
    seed: int = 0
    spec: AugmentSpec | None = None

    def params(self) -> dict:
        d = asdict(self)
        d.pop("spec")
        return d


def _uniform(rng, r: Range) -> float:
    lo, hi = r
    return float(lo + (hi - lo) * rng.random())


def sample_augmentation(spec: AugmentSpec, seed: int) -> SampledAugmentation:
    """Draw one concrete transform; every parameter is uniform in its range."""
    rng = np.random.default_rng(seed)
    # fixed draw order, disabled options still consume their draw
    crop_area = _uniform(rng, spec.crop_area)
    crop_aspect = _uniform(rng, spec.crop_aspect)
    crop_x, crop_y = float(rng.random()), float(rng.random())
    hflip = bool(rng.random() < 0.5) and spec.hflip
    vflip = bool(rng.random() < 0.5) and spec.vflip
    return SampledAugmentation(
        crop_area=crop_area,
        crop_aspect=crop_aspect,
        crop_x=crop_x,
        crop_y=crop_y,
        hflip=hflip,
        vflip=vflip,
        rotation=_uniform(rng, spec.rotation),
        shear=_uniform(rng, spec.shear),
        area_scale=_uniform(rng, spec.area_scale),
        saturation=_uniform(rng, spec.saturation),
        brightness=_uniform(rng, spec.brightness),
        contrast=_uniform(rng, spec.contrast),
        hue=_uniform(rng, spec.hue),
        seed=seed,
        spec=spec,
    )


def _crop_size(h: int, w: int, area: float, aspect: float) -> tuple[float, float]:
    # aspect is relative to the image's own aspect ratio, so (1, 1) is the full frame
    return w * math.sqrt(area * aspect), h * math.sqrt(area / aspect)


def _crop_window(a: SampledAugmentation, h: int, w: int):
    cw, ch = _crop_size(h, w, a.crop_area, a.crop_aspect)
    if (cw > w + 1e-9 or ch > h + 1e-9) and a.spec is not None:
        rng = np.random.default_rng([a.seed, 1])
        for _ in range(10):
            cw, ch = _crop_size(h, w, _uniform(rng, a.spec.crop_area), _uniform(rng, a.spec.crop_aspect))
            if cw <= w and ch <= h:
                break
        else:
            cw, ch = min(cw, w), min(ch, h)
            return cw, ch, (w - cw) / 2, (h - ch) / 2
    cw, ch = min(cw, w), min(ch, h)
    return cw, ch, a.crop_x * (w - cw), a.crop_y * (h - ch)


def _snap(x: np.ndarray) -> np.ndarray:
    r = np.rint(x)
    return np.where(np.abs(x - r) < 1e-9, r, x)


def geometry_matrix(a: SampledAugmentation, in_shape, out_shape) -> tuple[np.ndarray, np.ndarray]:
    """``(matrix, offset)`` mapping output (row, col) indices to source indices."""
    h, w = in_shape
    oh, ow = out_shape
    cw, ch, x0, y0 = _crop_window(a, h, w)

    def affine(m, t=(0.0, 0.0)):
        out = np.eye(3)
        out[:2, :2] = m
        out[:2, 2] = t
        return out

    # output index -> centered output coords -> crop units
    to_center = affine(np.eye(2), (0.5 - ow / 2, 0.5 - oh / 2))
    to_crop = affine(np.diag([cw / ow, ch / oh]))
    s = math.sqrt(a.area_scale)
    inv_scale = affine(np.diag([1 / s, 1 / s]))
    t = math.tan(math.radians(a.shear))
    inv_shear = affine([[1.0, -t], [0.0, 1.0]])
    phi = math.radians(a.rotation)
    c, sn = math.cos(phi), math.sin(phi)
    # forward rotation is counter-clockwise on screen (y axis points down)
    inv_rot = affine([[c, -sn], [sn, c]])
    inv_flip = affine(np.diag([-1.0 if a.hflip else 1.0, -1.0 if a.vflip else 1.0]))
    to_source = affine(np.eye(2), (x0 + cw / 2 - 0.5, y0 + ch / 2 - 0.5))
    xy = to_source @ inv_flip @ inv_rot @ inv_shear @ inv_scale @ to_crop @ to_center
    # (x, y) -> (row, col)
    swap = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 1]], dtype=float)
    rc = swap @ xy @ swap
    return _snap(rc[:2, :2]), _snap(rc[:2, 2])


def _warp(img: np.ndarray, matrix, offset, out_shape) -> np.ndarray:
    if out_shape == img.shape[:2] and np.array_equal(matrix, np.eye(2)) and not np.any(offset):
        return img.copy()
    chans = [ndimage.affine_transform(img[..., k], matrix, offset, output_shape=out_shape,
                                      order=1, mode="reflect") for k in range(img.shape[2])]
    return np.stack(chans, axis=-1)


def _gray(img: np.ndarray) -> np.ndarray:
    return img @ np.array([0.299, 0.587, 0.114])


def color_jitter(img: np.ndarray, brightness=1.0, contrast=1.0, saturation=1.0, hue=0.0) -> np.ndarray:
    out = img
    if brightness != 1.0:
        out = np.clip(out * brightness, 0, 1)
    if contrast != 1.0:
        m = _gray(out).mean()
        out = np.clip((out - m) * contrast + m, 0, 1)
    if saturation != 1.0:
        g = _gray(out)[..., None]
        out = np.clip((out - g) * saturation + g, 0, 1)
    if hue != 0.0:
        hsv = rgb2hsv(out)
        hsv[..., 0] = (hsv[..., 0] + hue) % 1.0
        out = np.clip(hsv2rgb(hsv), 0, 1)
    return out


def apply_augmentation(img: np.ndarray, a: SampledAugmentation, size: tuple[int, int] | None = None) -> np.ndarray:
    """Apply ``a`` to an RGB image; ``size`` is the output ``(width, height)``."""
    img = np.asarray(img)
    if img.size == 0:
        raise ValueError("cannot augment an empty image")
    h, w = img.shape[:2]
    ow, oh = size if size is not None else (w, h)
    matrix, offset = geometry_matrix(a, (h, w), (oh, ow))
    out = _warp(as_float_image(img), matrix, offset, (oh, ow))
    out = color_jitter(out, a.brightness, a.contrast, a.saturation, a.hue)
    return to_uint8(out) if img.dtype == np.uint8 else out


TTA_MODES = ("full_scenario_j", "flips_color_only")


def make_tta_replicas(img: np.ndarray, n: int, mode: str = "full_scenario_j", seed: int = 0,
                      spec: AugmentSpec | None = None, size: tuple[int, int] | None = None) -> list[np.ndarray]:
    """``n`` augmented copies of ``img``; replica ``i`` uses seed ``seed + i``."""
    if n < 1:
        raise ValueError("need at least one replica")
    if mode not in TTA_MODES:
        raise ValueError(f"unknown TTA mode {mode!r}; expected one of {TTA_MODES}")
    spec = spec or AugmentSpec()
    if mode == "flips_color_only":
        spec = spec.flips_color_only()
    return [apply_augmentation(img, sample_augmentation(spec, seed + i), size) for i in range(n)]


def average_replica_predictions(preds) -> np.ndarray:
    """Arithmetic mean of per-replica probability vectors."""
    rows = [np.asarray(p, dtype=np.float64) for p in preds]
    if not rows:
        raise ValueError("no predictions to average")
    n = rows[0].shape
    for r in rows[1:]:
        if r.shape != n:
            raise ValueError(f"prediction length mismatch: {r.shape} vs {n}")
    return stable_mean(np.stack(rows))


def predict_with_tta(predict, img, n: int, mode: str = "full_scenario_j", seed: int = 0,
                     spec: AugmentSpec | None = None, size=None) -> np.ndarray:
    """Average ``predict(replica)`` over ``n`` test-time replicas."""
    return average_replica_predictions(
        predict(r) for r in make_tta_replicas(img, n, mode, seed, spec, size))
