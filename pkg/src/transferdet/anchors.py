"""Anchor shapes from training boxes via k-means under the 1 - IoU distance."""
from __future__ import annotations

import itertools
import logging
import math

import numpy as np

from .boxes import shape_iou

log = logging.getLogger(__name__)


def _assign(boxes: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return np.argmin(1.0 - shape_iou(boxes, centroids), axis=1)


def mean_distortion(boxes: np.ndarray, centroids: np.ndarray) -> float:
    """Mean over boxes of 1 - IoU with the closest centroid."""
    d = 1.0 - shape_iou(boxes, centroids)
    return float(d.min(axis=1).mean())


def _cluster_cost(members: np.ndarray) -> float:
    if not len(members):
        return 0.0
    centre = members.mean(axis=0, keepdims=True)
    return float(np.sum(1.0 - shape_iou(members, centre)))


def partition_cost(boxes: np.ndarray, labels: np.ndarray, k: int) -> float:
    """Sum of 1 - IoU between every box and the mean shape of its cluster."""
    return sum(_cluster_cost(boxes[labels == c]) for c in range(k))


def _lloyd(boxes: np.ndarray, centroids: np.ndarray, max_iter: int) -> np.ndarray:
    k = len(centroids)
    labels = _assign(boxes, centroids)
    for _ in range(max_iter):
        for c in range(k):
            members = boxes[labels == c]
            if len(members):
                centroids[c] = members.mean(axis=0)
        new = _assign(boxes, centroids)
        if np.array_equal(new, labels):
            break
        labels = new
    return labels


def _refine(boxes: np.ndarray, labels: np.ndarray, k: int, max_passes: int) -> np.ndarray:
    """Single-box moves between clusters, taken only when the partition cost drops.

    Mean shapes are not the 1 - IoU minimisers, so Lloyd steps can stall in a
    partition that one move would improve.
    """
    labels = labels.copy()
    n = len(boxes)
    rows = np.arange(n)
    w, h = boxes[:, 0], boxes[:, 1]
    area = w * h

    def dist(means):
        inter = np.minimum(w[:, None], means[:, 0]) * np.minimum(h[:, None], means[:, 1])
        return 1.0 - inter / (area[:, None] + means[:, 0] * means[:, 1] - inter)

    counts = np.bincount(labels, minlength=k).astype(np.float64)
    sums = np.zeros((k, 2))
    np.add.at(sums, labels, boxes)
    d = dist(sums / counts[:, None])
    cur = np.bincount(labels, weights=d[rows, labels], minlength=k)
    for _ in range(max_passes):
        moved = False
        for i in range(n):
            own = labels[i]
            if counts[own] == 1:
                continue
            # column c: means with box i moved into c (own column: i removed)
            means = (sums + boxes[i]) / (counts + 1)[:, None]
            means[own] = (sums[own] - boxes[i]) / (counts[own] - 1)
            d = dist(means)
            per = np.bincount(labels, weights=d[rows, labels], minlength=k)
            after = per + d[i]
            after[own] = per[own] - d[i, own]
            delta = (after - cur) + (after[own] - cur[own])
            delta[own] = np.inf
            c = int(np.argmin(delta))
            if delta[c] < -1e-12:
                labels[i] = c
                sums[own] -= boxes[i]
                sums[c] += boxes[i]
                counts[own] -= 1
                counts[c] += 1
                cur[own], cur[c] = after[own], after[c]
                moved = True
        if not moved:
            break
    return labels


def _farthest_point_init(boxes: np.ndarray, k: int, first: int) -> np.ndarray:
    centroids = [boxes[first]]
    while len(centroids) < k:
        d = (1.0 - shape_iou(boxes, np.array(centroids))).min(axis=1)
        centroids.append(boxes[int(np.argmax(d))])
    return np.array(centroids, dtype=np.float64)


def _starts(boxes: np.ndarray, k: int, restarts: int, seed: int) -> list[np.ndarray]:
    """Largest box plus farthest points first, then extra k-subsets of distinct boxes.

    All k-subsets are used when there are few enough; otherwise ``restarts``
    of them are drawn with ``seed``.
    """
    areas = boxes[:, 0] * boxes[:, 1]
    first = int(np.argmax(areas))
    starts = [_farthest_point_init(boxes, k, first)]
    distinct = np.unique(boxes, axis=0)
    m = len(distinct)
    if math.comb(m, k) <= restarts:
        subsets = itertools.combinations(range(m), k)
    else:
        rng = np.random.default_rng(seed)
        subsets = (rng.choice(m, k, replace=False) for _ in range(restarts))
    starts.extend(distinct[list(idx)].astype(np.float64) for idx in subsets)
    return starts


def kmeans_iou(boxes: np.ndarray, k: int, max_iter: int = 100, restarts: int = 32,
               seed: int = 0, refine_best: int = 3) -> np.ndarray:
    """k-means under 1 - IoU with mean-shape centroids; ``boxes`` in canonical order.

    Each start contributes its nearest-centroid partition and its Lloyd fixed
    point.  The cheapest distinct partitions get single-box move refinement
    (all of them when the box set is small) and the lowest cost wins, earlier
    candidates first on ties.
    """
    found: dict[bytes, tuple[float, int, np.ndarray]] = {}
    for start in _starts(boxes, k, restarts, seed):
        for labels in (_assign(boxes, start), _lloyd(boxes, start.copy(), max_iter)):
            key = labels.tobytes()
            if len(np.unique(labels)) == k and key not in found:
                found[key] = (partition_cost(boxes, labels, k), len(found), labels)
    if not found:
        return _starts(boxes, k, 0, seed)[0]
    budget = max(refine_best, 4096 // len(boxes))
    best_labels, best_cost = None, np.inf
    for _, _, labels in sorted(found.values(), key=lambda v: (v[0], v[1]))[:budget]:
        labels = _refine(boxes, labels, k, max_iter)
        cost = partition_cost(boxes, labels, k)
        if cost < best_cost - 1e-12:
            best_labels, best_cost = labels, cost
    return np.array([boxes[best_labels == c].mean(axis=0) for c in range(k)])


def estimate_anchors(boxes, k: int, grid_size: int, seed: int | None = None) -> np.ndarray:
    """``k`` anchor shapes in grid-cell units, sorted by area ascending.

    ``boxes`` are normalised ``(w, h)`` pairs.  The first start is the
    largest box followed by farthest points; ``seed`` only picks the extra
    restarts when there are too many boxes to try every k-subset.
    """
    b = np.asarray(boxes, dtype=np.float64).reshape(-1, 2)
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(b) < k:
        raise ValueError(f"need at least k={k} boxes, got {len(b)}")
    if np.any(b <= 0):
        raise ValueError("box widths and heights must be positive")
    # canonical order makes the result independent of input order
    b = b[np.lexsort((b[:, 1], b[:, 0]))]
    distinct = np.unique(b, axis=0)
    if len(distinct) < k:
        log.warning("only %d distinct boxes for k=%d; duplicating the distinct set", len(distinct), k)
        centroids = distinct[np.arange(k) % len(distinct)]
    else:
        centroids = kmeans_iou(b, k, seed=0 if seed is None else seed)
    centroids = centroids * grid_size
    order = np.lexsort((centroids[:, 0], centroids[:, 0] * centroids[:, 1]))
    return centroids[order]
