"""Box records and the geometry shared by the region head and evaluation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class BoxAnnotation:
    """Ground-truth box, centre format, normalised to image dimensions."""

    class_id: int
    cx: float
    cy: float
    w: float
    h: float

    def validate(self) -> "BoxAnnotation":
        if self.class_id < 0:
            raise DataError(f"negative class id {self.class_id}")
        if not (0 < self.w <= 1 and 0 < self.h <= 1):
            raise DataError(f"box size ({self.w}, {self.h}) outside (0, 1]")
        if not (0 <= self.cx <= 1 and 0 <= self.cy <= 1):
            raise DataError(f"box centre ({self.cx}, {self.cy}) outside [0, 1]")
        return self

    @property
    def box(self) -> tuple[float, float, float, float]:
        return (self.cx, self.cy, self.w, self.h)

    def to_line(self) -> str:
        return f"{self.class_id} {self.cx:.6f} {self.cy:.6f} {self.w:.6f} {self.h:.6f}"


@dataclass(frozen=True)
class Detection:
    class_id: int
    cx: float
    cy: float
    w: float
    h: float
    probability: float

    @property
    def box(self) -> tuple[float, float, float, float]:
        return (self.cx, self.cy, self.w, self.h)

    @property
    def area(self) -> float:
        return self.w * self.h


def to_corners(box: Sequence[float]) -> tuple[float, float, float, float]:
    cx, cy, w, h = box
    return (cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)


def iou(box_a: Sequence[float], box_b: Sequence[float]) -> float:
    """Intersection over union of two centre-format boxes ``(cx, cy, w, h)``."""
    ax0, ay0, ax1, ay1 = to_corners(box_a)
    bx0, by0, bx1, by1 = to_corners(box_b)
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return float(inter / union) if union > 0 else 0.0


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of ``[n, 4]`` and ``[m, 4]`` centre-format box arrays."""
    a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    a0, a1 = a[:, None, :2] - a[:, None, 2:] / 2, a[:, None, :2] + a[:, None, 2:] / 2
    b0, b1 = b[None, :, :2] - b[None, :, 2:] / 2, b[None, :, :2] + b[None, :, 2:] / 2
    wh = np.clip(np.minimum(a1, b1) - np.maximum(a0, b0), 0, None)
    inter = wh[..., 0] * wh[..., 1]
    union = (a[:, None, 2] * a[:, None, 3]) + (b[None, :, 2] * b[None, :, 3]) - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return out


def shape_iou(wh_a: np.ndarray, wh_b: np.ndarray) -> np.ndarray:
    """IoU of co-centred boxes given only widths and heights; ``[n, m]``."""
    a = np.asarray(wh_a, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(wh_b, dtype=np.float64).reshape(-1, 2)
    inter = np.minimum(a[:, None, 0], b[None, :, 0]) * np.minimum(a[:, None, 1], b[None, :, 1])
    union = a[:, None, 0] * a[:, None, 1] + b[None, :, 0] * b[None, :, 1] - inter
    return inter / union


def nms_order(detections: Sequence[Detection]) -> list[int]:
    """Probability descending, then area descending, then input order."""
    return sorted(range(len(detections)),
                  key=lambda i: (-detections[i].probability, -detections[i].area, i))


def nms(detections: Sequence[Detection], overlap_threshold: float) -> list[Detection]:
    """Greedy per-class non-maximum suppression.

    A detection survives iff its IoU with every already-kept detection of the
    same class is <= ``overlap_threshold``.  Output is in suppression order.
    """
    if not 0 < overlap_threshold < 1:
        raise ValueError("overlap_threshold must lie in (0, 1)")
    dets = list(detections)
    if not dets:
        return []
    order = nms_order(dets)
    boxes = np.array([d.box for d in dets], dtype=np.float64)
    classes = np.array([d.class_id for d in dets])
    overlaps = iou_matrix(boxes, boxes)
    kept: list[int] = []
    for i in order:
        same = [k for k in kept if classes[k] == classes[i]]
        if all(overlaps[i, k] <= overlap_threshold for k in same):
            kept.append(i)
    return [dets[i] for i in kept]
