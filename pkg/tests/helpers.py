"""Shared oracles and fixtures-in-code for the test suite."""
from __future__ import annotations

import itertools

import numpy as np

from transferdet import tensor_core as tc
from transferdet.boxes import BoxAnnotation, Detection
from transferdet.netconfig import LayerSpec, NetworkConfig, RegionHeadSpec
from transferdet.network import Network
from transferdet.region import assign_truths, objectness_targets, region_loss
from transferdet.tensor_core import Parameter


# finite-difference harnesses, one per layer kind ------------------------------

def _away_from_zero(rng, shape, margin=0.02):
    v = rng.uniform(margin, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    return v


def conv_fd_error(rng, c, h, w, f, k, stride, pad, batch=None) -> float:
    shape = (c, h, w) if batch is None else (c, batch, h, w)
    x = Parameter(rng.normal(size=shape))
    wt = Parameter(rng.normal(size=(f, c, k, k)))
    b = Parameter(rng.normal(size=f))
    ho = tc.conv_output_size(h, k, stride, pad)
    wo = tc.conv_output_size(w, k, stride, pad)
    proj = rng.normal(size=(f, ho, wo) if batch is None else (f, batch, ho, wo))

    def run():
        out, cache = tc.conv2d_forward(x.value, wt.value, b.value, stride, pad)
        dx, dw, db = tc.conv2d_backward(proj, cache)
        x.gradient[...] = dx
        wt.gradient[...] = dw
        b.gradient[...] = db
        return float(np.sum(out * proj))

    return tc.finite_difference_check([x, wt, b], run)


def maxpool_fd_error(rng, c, h, w) -> float:
    # distinct values spaced well beyond 2 * eps so no window changes its argmax
    vals = rng.permutation(c * h * w).reshape(c, h, w) * 0.05 + rng.uniform(0, 0.01, size=(c, h, w))
    x = Parameter(vals.astype(np.float64))
    proj = rng.normal(size=(c, h // 2, w // 2))

    def run():
        out, cache = tc.maxpool_forward(x.value)
        x.gradient[...] = tc.maxpool_backward(proj, cache)
        return float(np.sum(out * proj))

    return tc.finite_difference_check([x], run)


def batchnorm_fd_error(rng, shape, mode="train") -> float:
    c = shape[0]
    x = Parameter(rng.normal(size=shape))
    gamma = Parameter(rng.uniform(0.5, 1.5, size=c))
    beta = Parameter(rng.normal(size=c))
    rm = rng.normal(size=c)
    rv = rng.uniform(0.5, 2.0, size=c)
    proj = rng.normal(size=shape)

    def run():
        out, cache = tc.batchnorm_forward(x.value, gamma.value, beta.value, rm.copy(), rv.copy(), mode)
        dx, dg, db = tc.batchnorm_backward(proj, cache)
        x.gradient[...] = dx
        gamma.gradient[...] = dg
        beta.gradient[...] = db
        return float(np.sum(out * proj))

    return tc.finite_difference_check([x, gamma, beta], run)


def leaky_fd_error(rng, shape) -> float:
    x = Parameter(_away_from_zero(rng, shape))
    proj = rng.normal(size=shape)

    def run():
        out = tc.leaky_relu(x.value)
        x.gradient[...] = tc.leaky_relu_backward(proj, x.value)
        return float(np.sum(out * proj))

    return tc.finite_difference_check([x], run)


def random_truths(rng, n, num_classes, lo=0.08, hi=0.6):
    out = []
    for _ in range(n):
        w, h = rng.uniform(lo, hi, size=2)
        cx = rng.uniform(w / 2, 1 - w / 2)
        cy = rng.uniform(h / 2, 1 - h / 2)
        out.append(BoxAnnotation(int(rng.integers(num_classes)), cx, cy, w, h))
    return out


def region_fd_error(rng, s, num_classes, num_anchors, num_truths) -> float:
    anchors = tuple((float(a), float(b)) for a, b in rng.uniform(0.5, 3.0, size=(num_anchors, 2)))
    head = RegionHeadSpec(num_classes, anchors)
    truths = random_truths(rng, num_truths, num_classes)
    raw = Parameter(rng.normal(scale=0.8, size=((num_classes + 5) * num_anchors, s, s)))
    assignment = assign_truths(truths, head, s)
    # IoU targets and the ignore mask are constants of the loss
    targets = objectness_targets(raw.value, assignment, head, truths)

    def run():
        loss, grad = region_loss(raw.value, assignment, head, targets)
        raw.gradient[...] = grad
        return loss

    return tc.finite_difference_check([raw], run)


def tiny_network_config(num_classes=2, anchors=((1.0, 1.5), (2.0, 1.0)), dim=32) -> NetworkConfig:
    head = RegionHeadSpec(num_classes, anchors)
    layers = (
        LayerSpec.conv(4), LayerSpec.pool(),
        LayerSpec.conv(4, stride=2),
        LayerSpec.conv(6), LayerSpec.pool(), LayerSpec.pool(), LayerSpec.pool(),
        LayerSpec.conv(head.required_filters, size=1, activation="linear", batch_normalize=False),
    )
    return NetworkConfig(dim, dim, layers, head)


def network_fd_errors(net: Network, images: np.ndarray, truths, max_entries=40, seed=0) -> dict[str, float]:
    """Per-layer-kind worst error of full forward/loss/backward against central differences."""
    from transferdet.region import batch_region_loss

    net.astype(np.float64)
    raw = net.forward(images, train=True)
    s = raw.shape[-1]
    frozen = [objectness_targets(raw[k], assign_truths(truths[k], net.head, s), net.head, truths[k])
              for k in range(len(truths))]

    def run():
        net.zero_grad()
        out = net.forward(images, train=True)
        loss, grad, _ = batch_region_loss(out, truths, net.head, frozen)
        net.backward(grad)
        return loss

    errs: dict[str, float] = {}
    rng = np.random.default_rng(seed)
    for idx, layer in net.conv_layers:
        kind = "conv+bn+leaky" if layer.batch_normalize else "conv+linear"
        e = tc.finite_difference_check(layer.parameters(), run, eps=1e-4,
                                       max_entries=max_entries, rng=rng)
        errs[kind] = max(errs.get(kind, 0.0), e)
    return errs


# brute-force evaluation oracles ------------------------------------------------

def brute_force_ap(labeled, num_truths) -> float:
    """Enumerate every confidence threshold, build (recall, precision) points, integrate the envelope."""
    confs = sorted({c for c, _ in labeled}, reverse=True)
    points = []
    for thr in confs:
        kept = [tp for c, tp in labeled if c >= thr]
        tp = sum(kept)
        points.append((tp / num_truths, tp / len(kept)))
    ap = 0.0
    prev_r = 0.0
    for r, _ in sorted(points):
        if r > prev_r:
            env = max(p for rr, p in points if rr >= r)
            ap += (r - prev_r) * env
            prev_r = r
    return ap


def raster_iou(a, b, n=200_000) -> float:
    """IoU by counting cell centres of an ``n x n`` raster over the unit square.

    Boxes are axis-aligned, so a box's cell set is the product of one row
    mask and one column mask; counts factor the same way.
    """
    centres = (np.arange(n) + 0.5) / n

    def axis(c, size):
        return np.abs(centres - c) <= size / 2

    ax, ay = axis(a[0], a[2]), axis(a[1], a[3])
    bx, by = axis(b[0], b[2]), axis(b[1], b[3])
    inter = np.count_nonzero(ax & bx) * np.count_nonzero(ay & by)
    union = np.count_nonzero(ax) * np.count_nonzero(ay) + np.count_nonzero(bx) * np.count_nonzero(by) - inter
    return inter / union if union else 0.0


def _corner_iou(a, b) -> float:
    ax0, ay0, ax1, ay1 = a[0] - a[2] / 2, a[1] - a[3] / 2, a[0] + a[2] / 2, a[1] + a[3] / 2
    bx0, by0, bx1, by1 = b[0] - b[2] / 2, b[1] - b[3] / 2, b[0] + b[2] / 2, b[1] + b[3] / 2
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = a[2] * a[3] + b[2] * b[3] - inter
    return inter / union if union > 0 else 0.0


def reference_nms(dets, threshold):
    """O(n^2): repeatedly take the top remaining detection, drop its same-class overlaps."""
    remaining = list(range(len(dets)))
    kept = []
    while remaining:
        best = min(remaining, key=lambda i: (-dets[i].probability, -dets[i].w * dets[i].h, i))
        kept.append(best)
        remaining.remove(best)
        remaining = [i for i in remaining
                     if dets[i].class_id != dets[best].class_id
                     or _corner_iou(dets[i].box, dets[best].box) <= threshold]
    return [dets[i] for i in kept]


def replay_match(dets, truths, thr=0.5):
    """Greedy-by-confidence replay written independently of the library."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].probability, i))
    used = [False] * len(truths)
    labels = [False] * len(dets)
    for i in order:
        best, best_iou = -1, -1.0
        for j, t in enumerate(truths):
            if used[j] or t.class_id != dets[i].class_id:
                continue
            v = _corner_iou(dets[i].box, t.box)
            if v > best_iou:
                best, best_iou = j, v
        if best >= 0 and best_iou >= thr:
            used[best] = True
            labels[i] = True
    return labels


def random_detections(rng, n, num_classes=3, quantize=None):
    out = []
    for _ in range(n):
        w, h = rng.uniform(0.05, 0.5, size=2)
        cx, cy = rng.uniform(0.1, 0.9, size=2)
        p = rng.uniform(0.01, 1.0)
        if quantize:
            p = round(p * quantize) / quantize or 1.0 / quantize
        out.append(Detection(int(rng.integers(num_classes)), cx, cy, w, h, p))
    return out


def best_partition(boxes: np.ndarray, k: int) -> tuple[float, np.ndarray]:
    """Exhaustive search over all k-labelings; each cluster's centre is its mean shape.

    Returns the lowest total cost and the centres of that labeling.
    """
    from transferdet.boxes import shape_iou

    best, best_means = np.inf, None
    n = len(boxes)
    for labels in itertools.product(range(k), repeat=n):
        if len(set(labels)) < k:
            continue
        lab = np.array(labels)
        cost = 0.0
        means = []
        for c in range(k):
            members = boxes[lab == c]
            centre = members.mean(axis=0, keepdims=True)
            means.append(centre[0])
            cost += float(np.sum(1.0 - shape_iou(members, centre)))
        if cost < best:
            best, best_means = cost, np.array(means)
    return best, best_means
