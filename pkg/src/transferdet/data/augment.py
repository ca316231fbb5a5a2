"""Training-time augmentation: crop jitter, mirror, HSV jitter, multi-scale input size."""
from __future__ import annotations

from dataclasses import dataclass, replace

import cv2
import numpy as np

from ..boxes import BoxAnnotation
from .annotations import AnnotatedImage

PAD_VALUE = 0.5
CROP_ATTEMPTS = 20


@dataclass(frozen=True)
class AugmentationConfig:
    scale_jitter: float = 0.30
    hflip_prob: float = 0.5
    hue_delta: float = 0.10
    sat_exposure_factor: float = 1.5
    annotation_jitter: float = 0.20
    annotation_retention: float = 0.80
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.annotation_retention <= 1:
            raise ValueError("annotation_retention must lie in (0, 1]")
        if min(self.scale_jitter, self.hue_delta, self.annotation_jitter) < 0:
            raise ValueError("jitter ranges must be >= 0")
        if self.sat_exposure_factor < 1:
            raise ValueError("sat_exposure_factor must be >= 1")
        if not 0 <= self.hflip_prob <= 1:
            raise ValueError("hflip_prob must lie in [0, 1]")

    @classmethod
    def identity(cls) -> "AugmentationConfig":
        return cls(scale_jitter=0.0, hflip_prob=0.0, hue_delta=0.0, sat_exposure_factor=1.0,
                   annotation_jitter=0.0)


@dataclass(frozen=True)
class AugmentParams:
    """What one augment() call actually did; crop is (x0, y0, x1, y1) in source pixels."""

    crop: tuple[int, int, int, int]
    flipped: bool
    hue: float
    saturation: float
    exposure: float


def _pixel_box(b: BoxAnnotation, width: int, height: int) -> tuple[float, float, float, float]:
    return ((b.cx - b.w / 2) * width, (b.cy - b.h / 2) * height,
            (b.cx + b.w / 2) * width, (b.cy + b.h / 2) * height)


def retained_fraction(box: BoxAnnotation, crop, width: int, height: int) -> float:
    x0, y0, x1, y1 = _pixel_box(box, width, height)
    cx0, cy0, cx1, cy1 = crop
    iw = max(0.0, min(x1, cx1) - max(x0, cx0))
    ih = max(0.0, min(y1, cy1) - max(y0, cy0))
    return iw * ih / ((x1 - x0) * (y1 - y0))


def sample_crop(boxes, width: int, height: int, cfg: AugmentationConfig,
                rng: np.random.Generator) -> tuple[int, int, int, int]:
    """Move each image edge by up to +-jitter of its dimension.

    Candidates that would leave any box with less than the retention fraction
    of its area are redrawn; after the attempt budget the full frame is used.
    """
    full = (0, 0, width, height)
    j = cfg.annotation_jitter
    if j == 0:
        return full
    dx, dy = j * width, j * height
    for _ in range(CROP_ATTEMPTS):
        u = rng.uniform(-1.0, 1.0, size=4)
        crop = (int(round(u[0] * dx)), int(round(u[1] * dy)),
                width + int(round(u[2] * dx)), height + int(round(u[3] * dy)))
        if crop[2] - crop[0] < 2 or crop[3] - crop[1] < 2:
            continue
        if all(retained_fraction(b, crop, width, height) >= cfg.annotation_retention for b in boxes):
            return crop
    return full


def apply_crop(sample: AnnotatedImage, crop) -> AnnotatedImage:
    c, h, w = sample.pixels.shape
    x0, y0, x1, y1 = crop
    if crop == (0, 0, w, h):
        return AnnotatedImage(sample.pixels.copy(), list(sample.boxes), sample.is_hard_negative,
                              sample.source)
    out = np.full((c, y1 - y0, x1 - x0), PAD_VALUE, dtype=np.float32)
    sx0, sy0, sx1, sy1 = max(x0, 0), max(y0, 0), min(x1, w), min(y1, h)
    if sx1 > sx0 and sy1 > sy0:
        out[:, sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = sample.pixels[:, sy0:sy1, sx0:sx1]
    cw, ch = x1 - x0, y1 - y0
    boxes = []
    for b in sample.boxes:
        bx0, by0, bx1, by1 = _pixel_box(b, w, h)
        bx0, by0 = max(bx0, x0), max(by0, y0)
        bx1, by1 = min(bx1, x1), min(by1, y1)
        if bx1 <= bx0 or by1 <= by0:
            continue
        boxes.append(BoxAnnotation(b.class_id, ((bx0 + bx1) / 2 - x0) / cw, ((by0 + by1) / 2 - y0) / ch,
                                   (bx1 - bx0) / cw, (by1 - by0) / ch))
    return AnnotatedImage(out, boxes, sample.is_hard_negative, sample.source)


def hflip(sample: AnnotatedImage) -> AnnotatedImage:
    boxes = [replace(b, cx=1.0 - b.cx) for b in sample.boxes]
    return AnnotatedImage(np.ascontiguousarray(sample.pixels[:, :, ::-1]), boxes,
                          sample.is_hard_negative, sample.source)


def hsv_adjust(pixels: np.ndarray, hue: float = 0.0, saturation: float = 1.0,
               exposure: float = 1.0) -> np.ndarray:
    """Shift hue (wrapping), scale saturation and value, clamp to [0, 1]."""
    rgb = np.ascontiguousarray(np.clip(pixels, 0.0, 1.0).transpose(1, 2, 0), dtype=np.float32)
    hsv = cv2.cvtColor(rgb, cv2.COLOR_RGB2HSV)  # hue in degrees [0, 360)
    if hue:
        hsv[..., 0] = np.mod(hsv[..., 0] + np.float32(hue * 360.0), np.float32(360.0))
    if saturation != 1.0:
        hsv[..., 1] = np.clip(hsv[..., 1] * np.float32(saturation), 0.0, 1.0)
    if exposure != 1.0:
        hsv[..., 2] = np.clip(hsv[..., 2] * np.float32(exposure), 0.0, 1.0)
    out = np.clip(cv2.cvtColor(hsv, cv2.COLOR_HSV2RGB), 0.0, 1.0)
    return np.ascontiguousarray(out.transpose(2, 0, 1))


def hue_shift(pixels: np.ndarray, delta: float) -> np.ndarray:
    return hsv_adjust(pixels, hue=delta)


def _scale_draw(factor: float, rng: np.random.Generator) -> float:
    s = rng.uniform(1.0, factor)
    return s if rng.random() < 0.5 else 1.0 / s


def augment_with_params(sample: AnnotatedImage, cfg: AugmentationConfig,
                        rng: np.random.Generator) -> tuple[AnnotatedImage, AugmentParams]:
    h, w = sample.height, sample.width
    crop = sample_crop(sample.boxes, w, h, cfg, rng)
    out = apply_crop(sample, crop)
    flipped = bool(rng.random() < cfg.hflip_prob)
    if flipped:
        out = hflip(out)
    hue = float(rng.uniform(-cfg.hue_delta, cfg.hue_delta)) if cfg.hue_delta else 0.0
    sat = _scale_draw(cfg.sat_exposure_factor, rng) if cfg.sat_exposure_factor > 1 else 1.0
    exp = _scale_draw(cfg.sat_exposure_factor, rng) if cfg.sat_exposure_factor > 1 else 1.0
    if hue or sat != 1.0 or exp != 1.0:
        out.pixels = hsv_adjust(out.pixels, hue, sat, exp)
    return out, AugmentParams(crop, flipped, hue, sat, exp)


def augment(sample: AnnotatedImage, cfg: AugmentationConfig, rng: np.random.Generator) -> AnnotatedImage:
    """Crop jitter, optional mirror, HSV jitter; never fails, degrading to identity."""
    return augment_with_params(sample, cfg, rng)[0]


def input_dim_candidates(base: int = 416, jitter: float = 0.30, stride: int = 32) -> list[int]:
    lo, hi = base * (1 - jitter), base * (1 + jitter)
    first = int(np.ceil(lo / stride - 1e-9)) * stride
    return [d for d in range(max(first, stride), int(np.floor(hi + 1e-9)) + 1, stride)]


def choose_input_dim(base: int = 416, jitter: float = 0.30, stride: int = 32,
                     rng: np.random.Generator | None = None) -> int:
    """Uniform draw among multiples of ``stride`` within ``base * (1 +- jitter)``."""
    cands = input_dim_candidates(base, jitter, stride)
    if not cands:
        return base
    if rng is None or len(cands) == 1:
        return cands[0] if len(cands) == 1 else base
    return int(cands[rng.integers(len(cands))])
