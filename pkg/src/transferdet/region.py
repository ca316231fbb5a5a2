"""Grid/anchor region head: decoding, truth assignment, loss, single-pass detection.

Raw output layout per image is ``[(C + 5) * A, S, S]``; for anchor ``a`` the
channels ``a*(C+5) .. a*(C+5)+C+4`` hold ``tx, ty, tw, th, to`` followed by
the ``C`` class logits.  Cell ``(i, j)`` is column ``i``, row ``j``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .boxes import BoxAnnotation, Detection, iou_matrix, nms, shape_iou
from .errors import ConfigurationError, DataError
from .netconfig import RegionHeadSpec

LAMBDA_COORD = 1.0
LAMBDA_OBJ = 5.0
LAMBDA_NOOBJ = 1.0
LAMBDA_CLASS = 1.0


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def softmax(x, axis: int = 0):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def split_raw(raw: np.ndarray, head: RegionHeadSpec) -> np.ndarray:
    """View raw ``[(C+5)*A, S, S]`` as ``[A, C+5, S, S]`` (float64)."""
    raw = np.asarray(raw, dtype=np.float64)
    c5 = head.num_classes + 5
    if raw.ndim != 3 or raw.shape[0] != c5 * head.num_anchors or raw.shape[1] != raw.shape[2]:
        raise ConfigurationError(
            f"raw output shape {raw.shape} does not match ({head.num_classes}+5)*"
            f"{head.num_anchors} channels on a square grid"
        )
    return raw.reshape(head.num_anchors, c5, raw.shape[1], raw.shape[2])


@dataclass
class DecodedGrid:
    """Per-predictor arrays, each indexed ``[a, j, i]``."""

    boxes: np.ndarray        # [A, S, S, 4] centre format, normalised
    objectness: np.ndarray   # [A, S, S]
    class_probs: np.ndarray  # [A, C, S, S]

    @property
    def probabilities(self) -> np.ndarray:
        """Class-weighted probabilities ``[A, C, S, S]``."""
        return self.objectness[:, None] * self.class_probs


def decode_grid(raw: np.ndarray, head: RegionHeadSpec) -> DecodedGrid:
    t = split_raw(raw, head)
    s = t.shape[-1]
    anchors = np.asarray(head.anchors, dtype=np.float64)
    cols = np.arange(s)[None, None, :]
    rows = np.arange(s)[None, :, None]
    bx = (sigmoid(t[:, 0]) + cols) / s
    by = (sigmoid(t[:, 1]) + rows) / s
    bw = anchors[:, 0, None, None] * np.exp(t[:, 2]) / s
    bh = anchors[:, 1, None, None] * np.exp(t[:, 3]) / s
    return DecodedGrid(np.stack([bx, by, bw, bh], axis=-1), sigmoid(t[:, 4]), softmax(t[:, 5:], axis=1))


def decode(raw: np.ndarray, head: RegionHeadSpec) -> list[Detection]:
    """One candidate per (cell, anchor), labelled with its most probable class."""
    g = decode_grid(raw, head)
    probs = g.probabilities
    best = probs.argmax(axis=1)
    a_n, s = g.objectness.shape[0], g.objectness.shape[-1]
    out = []
    for j in range(s):
        for i in range(s):
            for a in range(a_n):
                c = int(best[a, j, i])
                bx, by, bw, bh = g.boxes[a, j, i]
                out.append(Detection(c, float(bx), float(by), float(bw), float(bh),
                                     float(probs[a, c, j, i])))
    return out


def encode_offsets(box: Sequence[float], cell: tuple[int, int], anchor: tuple[float, float],
                   s: int) -> tuple[float, float, float, float]:
    """Inverse of decoding: raw ``(tx, ty, tw, th)`` that reproduce ``box``."""
    cx, cy, w, h = box
    i, j = cell
    return (float(logit(cx * s - i)), float(logit(cy * s - j)),
            float(np.log(w * s / anchor[0])), float(np.log(h * s / anchor[1])))


@dataclass(frozen=True)
class OwnedTruth:
    truth_index: int
    class_id: int
    box: tuple[float, float, float, float]
    cell: tuple[int, int]       # (i, j) = (column, row)
    anchor: int
    targets: tuple[float, float, float, float]  # sigma(tx), sigma(ty), tw, th


@dataclass
class GroundTruthAssignment:
    grid_size: int
    owners: list[OwnedTruth]

    def owner_mask(self, num_anchors: int) -> np.ndarray:
        m = np.zeros((num_anchors, self.grid_size, self.grid_size), dtype=bool)
        for o in self.owners:
            m[o.anchor, o.cell[1], o.cell[0]] = True
        return m


def assign_truths(truths: Sequence[BoxAnnotation], head: RegionHeadSpec, s: int) -> GroundTruthAssignment:
    """Give each truth to the anchor whose shape best overlaps it, in the cell holding its centre.

    Ties go to the lowest anchor index.  If that (cell, anchor) slot is already
    taken by an earlier truth, the best free anchor in the same cell is used;
    a truth with no free slot left is dropped.
    """
    anchors = np.asarray(head.anchors, dtype=np.float64)
    taken: set[tuple[int, int, int]] = set()
    owners = []
    for t_idx, t in enumerate(truths):
        if not (t.w > 0 and t.h > 0):
            raise DataError(f"truth {t_idx} has zero width or height")
        i = min(int(t.cx * s), s - 1)
        j = min(int(t.cy * s), s - 1)
        ious = shape_iou(np.array([[t.w * s, t.h * s]]), anchors)[0]
        # stable sort keeps lowest index first among equal IoUs
        for a in np.argsort(-ious, kind="stable"):
            if (i, j, int(a)) not in taken:
                break
        else:
            continue
        a = int(a)
        taken.add((i, j, a))
        targets = (t.cx * s - i, t.cy * s - j,
                   float(np.log(t.w * s / anchors[a, 0])), float(np.log(t.h * s / anchors[a, 1])))
        owners.append(OwnedTruth(t_idx, t.class_id, t.box, (i, j), a, targets))
    return GroundTruthAssignment(s, owners)


@dataclass
class ObjectnessTargets:
    """Quantities the loss treats as constants (no gradient flows through them)."""

    owner_iou: np.ndarray     # [n_owners]
    ignore: np.ndarray        # [A, S, S] bool


def objectness_targets(raw: np.ndarray, assignment: GroundTruthAssignment,
                       head: RegionHeadSpec, truths: Sequence[BoxAnnotation] | None = None) -> ObjectnessTargets:
    g = decode_grid(raw, head)
    s = assignment.grid_size
    owner_iou = np.array([
        iou_matrix(g.boxes[o.anchor, o.cell[1], o.cell[0]][None], np.array([o.box]))[0, 0]
        for o in assignment.owners
    ], dtype=np.float64)
    truth_boxes = np.array([t.box for t in truths] if truths is not None
                           else [o.box for o in assignment.owners], dtype=np.float64)
    if truth_boxes.size:
        best = iou_matrix(g.boxes.reshape(-1, 4), truth_boxes).max(axis=1)
        ignore = best.reshape(head.num_anchors, s, s) > head.objectness_ignore_iou
    else:
        ignore = np.zeros((head.num_anchors, s, s), dtype=bool)
    return ObjectnessTargets(owner_iou, ignore)


def region_loss(raw: np.ndarray, assignment: GroundTruthAssignment, head: RegionHeadSpec,
                targets: ObjectnessTargets | None = None,
                truths: Sequence[BoxAnnotation] | None = None) -> tuple[float, np.ndarray]:
    """Composite squared-error loss for one image and its gradient w.r.t. ``raw``.

    Owners: coordinate error on (sigma(tx), sigma(ty), tw, th), objectness
    error against the IoU of the decoded box with its truth, squared error of
    the class softmax against one-hot.  Non-owners push sigma(to) to zero
    unless their decoded box already overlaps a truth by more than the ignore
    threshold.  IoU targets and the ignore mask are held constant.
    """
    t = split_raw(raw, head)
    if t.shape[-1] != assignment.grid_size:
        raise ConfigurationError("assignment grid size does not match raw output")
    if targets is None:
        targets = objectness_targets(raw, assignment, head, truths)
    grad = np.zeros_like(t)
    so = sigmoid(t[:, 4])
    owners = assignment.owner_mask(head.num_anchors)
    noobj = ~owners & ~targets.ignore
    loss = LAMBDA_NOOBJ * float(np.sum(so[noobj] ** 2))
    grad[:, 4] += np.where(noobj, LAMBDA_NOOBJ * 2 * so * so * (1 - so), 0.0)

    for o, target_iou in zip(assignment.owners, targets.owner_iou):
        i, j = o.cell
        a = o.anchor
        v = t[a, :, j, i]
        sx, sy = sigmoid(v[0]), sigmoid(v[1])
        rx, ry = sx - o.targets[0], sy - o.targets[1]
        rw, rh = v[2] - o.targets[2], v[3] - o.targets[3]
        loss += LAMBDA_COORD * float(rx * rx + ry * ry + rw * rw + rh * rh)
        grad[a, 0, j, i] += LAMBDA_COORD * 2 * rx * sx * (1 - sx)
        grad[a, 1, j, i] += LAMBDA_COORD * 2 * ry * sy * (1 - sy)
        grad[a, 2, j, i] += LAMBDA_COORD * 2 * rw
        grad[a, 3, j, i] += LAMBDA_COORD * 2 * rh

        s_o = so[a, j, i]
        ro = s_o - target_iou
        loss += LAMBDA_OBJ * float(ro * ro)
        grad[a, 4, j, i] += LAMBDA_OBJ * 2 * ro * s_o * (1 - s_o)

        if not 0 <= o.class_id < head.num_classes:
            raise DataError(f"class id {o.class_id} outside model's {head.num_classes} classes")
        p = softmax(v[5:])
        onehot = np.zeros_like(p)
        onehot[o.class_id] = 1.0
        gp = LAMBDA_CLASS * 2 * (p - onehot)
        loss += LAMBDA_CLASS * float(np.sum((p - onehot) ** 2))
        grad[a, 5:, j, i] += p * (gp - np.dot(p, gp))
    return loss, grad.reshape(raw.shape)


def batch_region_loss(raw: np.ndarray, truths_per_image: Sequence[Sequence[BoxAnnotation]],
                      head: RegionHeadSpec, targets: Sequence[ObjectnessTargets] | None = None,
                      ) -> tuple[float, np.ndarray, list[float]]:
    """Mean per-image loss over a batch ``[N, ...]`` and its gradient (float64)."""
    n = raw.shape[0]
    s = raw.shape[-1]
    grad = np.zeros(raw.shape, dtype=np.float64)
    losses = []
    for k in range(n):
        assignment = assign_truths(truths_per_image[k], head, s)
        loss, g = region_loss(raw[k], assignment, head, targets[k] if targets else None,
                              truths=truths_per_image[k])
        losses.append(loss)
        grad[k] = g / n
    return float(np.mean(losses)) if losses else 0.0, grad, losses


def forward_detect(network, image: np.ndarray, head: RegionHeadSpec | None = None,
                   prob_threshold: float = 0.5, nms_threshold: float | None = None) -> list[Detection]:
    """Single forward pass: decode, keep probability > threshold, then NMS."""
    head = head or network.head
    cfg = network.config
    if image.ndim != 3 or image.shape[1:] != (cfg.input_height, cfg.input_width):
        raise ConfigurationError(
            f"image shape {image.shape} does not match network input "
            f"[{cfg.channels}, {cfg.input_height}, {cfg.input_width}]"
        )
    raw = network.forward(image[None], train=False)[0]
    return detections_from_raw(raw, head, prob_threshold, nms_threshold)


def detections_from_raw(raw: np.ndarray, head: RegionHeadSpec, prob_threshold: float,
                        nms_threshold: float | None = None) -> list[Detection]:
    candidates = [d for d in decode(raw, head) if d.probability > prob_threshold]
    return nms(candidates, nms_threshold or head.nms_overlap_threshold)
