"""Procedural scenes standing in for real product-package photographs.

Two styles:

* ``brand`` - portrait "product boxes" whose class is a base colour plus a
  stripe layout, optionally with plain untextured rectangles of other aspect
  ratios as unannotated distractors.
* ``shape`` - generic silhouettes (rectangle, ellipse, triangle, diamond) with
  random colours and textures, used to pretrain a backbone.
"""
from __future__ import annotations

import colorsys
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from ..boxes import BoxAnnotation, iou
from .annotations import (AnnotatedImage, DatasetManifest, save_image, write_class_names,
                          write_label_file)

log = logging.getLogger(__name__)

SHAPE_KINDS = ("rectangle", "ellipse", "triangle", "diamond")
PLACEMENT_ATTEMPTS = 100
_SPLIT_CODES = {"train": 1, "val": 2, "test": 3}


@dataclass(frozen=True)
class BrandSignature:
    base_color: tuple[float, float, float]
    stripe_color: tuple[float, float, float]
    vertical: bool
    stripes: int


def brand_signature(class_id: int) -> BrandSignature:
    hue = (class_id * 0.618033988749895) % 1.0
    base = colorsys.hsv_to_rgb(hue, 0.75, 0.85)
    stripe = (0.95, 0.95, 0.95) if class_id % 4 < 2 else (0.08, 0.08, 0.08)
    return BrandSignature(base, stripe, vertical=bool(class_id % 2), stripes=1 + (class_id // 2) % 3)


@dataclass(frozen=True)
class SyntheticSceneSpec:
    width: int = 96
    height: int = 96
    num_boxes: int = 1
    class_ids: tuple[int, ...] = (0,)
    num_distractors: int = 0
    seed: int = 0
    style: str = "brand"
    size_range: tuple[float, float] = (0.18, 0.30)
    max_iou: float = 0.3


def _background(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    level = rng.uniform(0.3, 0.7)
    tint = rng.uniform(-0.05, 0.05, size=3)
    gy = np.linspace(-1, 1, h)[:, None] * rng.uniform(-0.08, 0.08)
    gx = np.linspace(-1, 1, w)[None, :] * rng.uniform(-0.08, 0.08)
    img = level + tint[:, None, None] + (gy + gx)[None] + rng.normal(0, 0.02, size=(3, h, w))
    return np.clip(img, 0, 1).astype(np.float32)


def _stripes(box_pixels: np.ndarray, color, vertical: bool, count: int) -> None:
    _, bh, bw = box_pixels.shape
    span = bw if vertical else bh
    bands = 2 * count + 1
    for k in range(1, bands, 2):
        a, b = (k * span) // bands, ((k + 1) * span) // bands
        if vertical:
            box_pixels[:, :, a:b] = np.asarray(color, np.float32)[:, None, None]
        else:
            box_pixels[:, a:b, :] = np.asarray(color, np.float32)[:, None, None]


def _shape_mask(kind: str, bh: int, bw: int) -> np.ndarray:
    yy, xx = np.mgrid[0:bh, 0:bw]
    u = (xx + 0.5) / bw * 2 - 1
    v = (yy + 0.5) / bh * 2 - 1
    if kind == "rectangle":
        return np.ones((bh, bw), bool)
    if kind == "ellipse":
        return u * u + v * v <= 1.0
    if kind == "triangle":
        return np.abs(u) <= (v + 1) / 2
    return np.abs(u) + np.abs(v) <= 1.0


def _random_color(rng: np.random.Generator) -> tuple[float, float, float]:
    return colorsys.hsv_to_rgb(rng.random(), rng.uniform(0.3, 0.9), rng.uniform(0.35, 0.95))


def _place(rng: np.random.Generator, spec: SyntheticSceneSpec, aspect: tuple[float, float],
           placed: list[tuple[int, int, int, int]], max_iou: float):
    W, H = spec.width, spec.height
    for _ in range(PLACEMENT_ATTEMPTS):
        bw = int(round(rng.uniform(*spec.size_range) * min(W, H)))
        bh = int(round(bw * rng.uniform(*aspect)))
        bw, bh = max(bw, 4), max(bh, 4)
        if bw > W or bh > H:
            continue
        x0 = int(rng.integers(0, W - bw + 1))
        y0 = int(rng.integers(0, H - bh + 1))
        cand = (x0, y0, x0 + bw, y0 + bh)
        if all(_pixel_iou(cand, p) < max_iou for p in placed):
            return cand
    return None


def _pixel_iou(a, b) -> float:
    return iou(((a[0] + a[2]) / 2, (a[1] + a[3]) / 2, a[2] - a[0], a[3] - a[1]),
               ((b[0] + b[2]) / 2, (b[1] + b[3]) / 2, b[2] - b[0], b[3] - b[1]))


def generate_synthetic_scene(spec: SyntheticSceneSpec) -> AnnotatedImage:
    """Render one scene; annotations are exact pixel rectangles of the planted boxes."""
    rng = np.random.default_rng(spec.seed)
    W, H = spec.width, spec.height
    pixels = _background(rng, H, W)
    planted: list[tuple[int, int, int, int]] = []
    labels: list[int] = []
    for _ in range(spec.num_boxes):
        aspect = (1.3, 1.7) if spec.style == "brand" else (0.6, 1.6)
        rect = _place(rng, spec, aspect, planted, spec.max_iou)
        if rect is None:
            log.warning("placed only %d of %d boxes (seed %d)", len(planted), spec.num_boxes, spec.seed)
            break
        planted.append(rect)
        labels.append(int(spec.class_ids[rng.integers(len(spec.class_ids))]))
    distractors = []
    for _ in range(spec.num_distractors):
        # no overlap with planted boxes, so annotated objects are never hidden
        rect = _place(rng, spec, (0.45, 0.8), planted + distractors, 1e-9)
        if rect is None:
            log.warning("placed only %d of %d distractors (seed %d)", len(distractors),
                        spec.num_distractors, spec.seed)
            break
        distractors.append(rect)
    for x0, y0, x1, y1 in distractors:
        pixels[:, y0:y1, x0:x1] = np.asarray(_random_color(rng), np.float32)[:, None, None]
    boxes = []
    for (x0, y0, x1, y1), cls in zip(planted, labels):
        patch = pixels[:, y0:y1, x0:x1]
        if spec.style == "brand":
            sig = brand_signature(cls)
            patch[...] = np.asarray(sig.base_color, np.float32)[:, None, None]
            _stripes(patch, sig.stripe_color, sig.vertical, sig.stripes)
        else:
            fill = np.empty_like(patch)
            fill[...] = np.asarray(_random_color(rng), np.float32)[:, None, None]
            texture = int(rng.integers(3))
            if texture:
                _stripes(fill, _random_color(rng), texture == 2, int(rng.integers(1, 4)))
            mask = _shape_mask(SHAPE_KINDS[cls % len(SHAPE_KINDS)], y1 - y0, x1 - x0)
            patch[:, mask] = fill[:, mask]
        boxes.append(BoxAnnotation(cls, (x0 + x1) / 2 / W, (y0 + y1) / 2 / H, (x1 - x0) / W, (y1 - y0) / H))
    noise = rng.normal(0, 0.01, size=pixels.shape).astype(np.float32)
    pixels = np.clip(pixels + noise, 0, 1)
    return AnnotatedImage(pixels, boxes, is_hard_negative=not boxes, source=f"synthetic:{spec.seed}")


def scene_seed(seed: int, split: str, class_index: int, index: int) -> int:
    code = _SPLIT_CODES.get(split, 9)
    ss = np.random.SeedSequence([seed, code, class_index + 1, index])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def generate_scenes(template: SyntheticSceneSpec, count: int, seed: int, split: str,
                    class_index: int = -1) -> list[AnnotatedImage]:
    """In-memory scenes; ``class_index == -1`` keeps the template's class list."""
    out = []
    for k in range(count):
        spec = replace(template, seed=scene_seed(seed, split, class_index, k))
        if class_index >= 0:
            spec = replace(spec, class_ids=(class_index,))
        out.append(generate_synthetic_scene(spec))
    return out


def generate_hard_negatives(template: SyntheticSceneSpec, count: int, seed: int, split: str,
                            distractors: int | None = None) -> list[AnnotatedImage]:
    """Scenes holding only unannotated distractor rectangles."""
    spec = replace(template, num_boxes=0,
                   num_distractors=distractors if distractors is not None else max(template.num_distractors, 1))
    return [generate_synthetic_scene(replace(spec, seed=scene_seed(seed, split, 10_000, k)))
            for k in range(count)]


def generate_synthetic_dataset(per_class_counts: Mapping[str, int], template: SyntheticSceneSpec,
                               out_dir: str | Path, seed: int = 0, split: str = "train",
                               hard_negatives: int = 0) -> DatasetManifest:
    """Write PNG images, label files, ``<split>.txt`` and ``classes.names``.

    Every image generated for class ``k`` carries only class-``k`` boxes, so
    per-class image counts are exact.  Different splits use disjoint seed
    namespaces.
    """
    out_dir = Path(out_dir)
    names = list(per_class_counts)
    if not names and not hard_negatives:
        return DatasetManifest([], [])
    img_dir = out_dir / split
    img_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, name in enumerate(names):
        for idx, scene in enumerate(generate_scenes(template, per_class_counts[name], seed, split, k)):
            path = img_dir / f"{split}_{k:02d}_{idx:05d}.png"
            save_image(path, scene.pixels)
            write_label_file(path.with_suffix(".txt"), scene.boxes)
            paths.append(path)
    for idx, scene in enumerate(generate_hard_negatives(template, hard_negatives, seed, split)):
        path = img_dir / f"{split}_neg_{idx:05d}.png"
        save_image(path, scene.pixels)
        write_label_file(path.with_suffix(".txt"), [])
        paths.append(path)
    manifest = DatasetManifest(paths, names)
    (out_dir / f"{split}.txt").write_text("".join(f"{p.relative_to(out_dir)}\n" for p in paths))
    if names:
        write_class_names(out_dir / "classes.names", names)
    return manifest
