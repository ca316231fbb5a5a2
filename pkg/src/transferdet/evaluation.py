"""Precision/recall evaluation, AP, and detection-probability analysis."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .boxes import BoxAnnotation, Detection, iou, iou_matrix, nms
from .data.annotations import AnnotatedImage
from .data.batches import resize_pixels
from .errors import DataError
from .region import detections_from_raw

__all__ = [
    "EvalReport", "GapReport", "PRCurve", "compute_pr_and_ap", "evaluate", "iou", "match_detections",
    "nms", "probability_gap_analysis", "write_report",
]

EVAL_FLOOR = 0.005


@dataclass
class MatchResult:
    is_tp: list[bool]             # aligned with the input detections
    matched_truth: list[int]      # truth index or -1
    false_negatives: int

    @property
    def true_positives(self) -> int:
        return sum(self.is_tp)

    @property
    def false_positives(self) -> int:
        return len(self.is_tp) - sum(self.is_tp)


def match_detections(detections: Sequence[Detection], truths: Sequence[BoxAnnotation],
                     iou_threshold: float = 0.5) -> MatchResult:
    """Greedy matching in descending probability.

    Each detection takes the unmatched same-class truth it overlaps most
    (IoU >= threshold; ties to the lower index) and is a true positive, or
    else a false positive.  Truths left over are false negatives.
    """
    n = len(detections)
    is_tp = [False] * n
    matched = [-1] * n
    if n and truths:
        overlaps = iou_matrix(np.array([d.box for d in detections]), np.array([t.box for t in truths]))
    taken = [False] * len(truths)
    for i in sorted(range(n), key=lambda k: (-detections[k].probability, k)):
        best, best_iou = -1, -1.0
        for j, t in enumerate(truths):
            if taken[j] or t.class_id != detections[i].class_id:
                continue
            o = overlaps[i, j]
            if o >= iou_threshold and o > best_iou:
                best, best_iou = j, o
        if best >= 0:
            taken[best] = True
            is_tp[i] = True
            matched[i] = best
    return MatchResult(is_tp, matched, taken.count(False))


@dataclass
class PRCurve:
    points: list[tuple[float, float, float]]   # (recall, precision, confidence threshold)
    ap: float
    num_truths: int
    iou_match_threshold: float = 0.5

    @property
    def recall(self) -> np.ndarray:
        return np.array([p[0] for p in self.points])

    @property
    def precision(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])


def compute_pr_and_ap(labeled: Iterable[tuple[float, bool]], num_truths: int,
                      iou_match_threshold: float = 0.5) -> PRCurve:
    """PR points at every distinct confidence and all-point envelope AP.

    ``labeled`` holds ``(confidence, is_true_positive)`` pairs.  Detections
    sharing a confidence enter the curve together.
    """
    if num_truths < 1:
        raise ValueError("AP is undefined without ground-truth boxes")
    items = sorted(labeled, key=lambda x: -x[0])
    points = []
    tp = fp = 0
    k = 0
    while k < len(items):
        conf = items[k][0]
        while k < len(items) and items[k][0] == conf:
            if items[k][1]:
                tp += 1
            else:
                fp += 1
            k += 1
        points.append((tp / num_truths, tp / (tp + fp), conf))
    ap = 0.0
    prev_recall = 0.0
    envelope = 0.0
    # walk backwards so the running max is the envelope at each recall level
    env = [0.0] * len(points)
    for idx in range(len(points) - 1, -1, -1):
        envelope = max(envelope, points[idx][1])
        env[idx] = envelope
    for (r, _, _), e in zip(points, env):
        ap += (r - prev_recall) * e
        prev_recall = r
    return PRCurve(points, ap, num_truths, iou_match_threshold)


def five_number_summary(values: Sequence[float]) -> tuple[float, float, float, float, float]:
    v = np.asarray(values, dtype=np.float64)
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return (float(v.min()), float(q1), float(med), float(q3), float(v.max()))


@dataclass
class GapReport:
    known_stats: dict[int, tuple[float, float, float, float, float]]
    unknown_stats: tuple[float, float, float, float, float] | None
    min_known: float
    max_unknown: float
    threshold: float | None

    @property
    def gap(self) -> float:
        return self.min_known - self.max_unknown

    @property
    def overlap(self) -> bool:
        return self.gap <= 0


def probability_gap_analysis(known: Sequence[Detection], unknown: Sequence[Detection]) -> GapReport:
    """Separate trained-class true positives from detections on unknown objects.

    The recommended threshold is the midpoint between the highest unknown
    probability and the lowest known one; None when the two populations
    overlap.  An empty unknown set counts as a maximum probability of 0.
    """
    if not known:
        raise ValueError("known detection set is empty")
    by_class: dict[int, list[float]] = {}
    for d in known:
        by_class.setdefault(d.class_id, []).append(d.probability)
    stats = {c: five_number_summary(v) for c, v in sorted(by_class.items())}
    min_known = min(d.probability for d in known)
    max_unknown = max((d.probability for d in unknown), default=0.0)
    unknown_stats = five_number_summary([d.probability for d in unknown]) if unknown else None
    threshold = (min_known + max_unknown) / 2 if min_known > max_unknown else None
    return GapReport(stats, unknown_stats, min_known, max_unknown, threshold)


@dataclass
class ImageResult:
    detections: list[Detection]
    truths: list[BoxAnnotation]
    match: MatchResult


@dataclass
class EvalReport:
    curves: dict[int, PRCurve]
    combined: PRCurve | None
    probability_stats: dict[tuple[int, int], tuple[float, float, float, float, float]]
    recommended_threshold: float | None
    class_names: list[str] = field(default_factory=list)
    images: list[ImageResult] = field(default_factory=list, repr=False)
    probability_groups: dict[tuple[int, int], list[float]] = field(default_factory=dict, repr=False)

    @property
    def ap(self) -> dict[int, float]:
        return {c: curve.ap for c, curve in self.curves.items()}

    @property
    def combined_ap(self) -> float | None:
        return self.combined.ap if self.combined else None

    def name(self, class_id: int) -> str:
        if 0 <= class_id < len(self.class_names):
            return self.class_names[class_id]
        return f"class{class_id}"

    def true_positive_detections(self) -> list[Detection]:
        return [d for r in self.images for d, tp in zip(r.detections, r.match.is_tp) if tp]

    def all_detections(self) -> list[Detection]:
        return [d for r in self.images for d in r.detections]


def detect_images(network, images: Sequence[AnnotatedImage], prob_threshold: float = EVAL_FLOOR,
                  nms_threshold: float | None = None, batch_size: int = 16) -> list[list[Detection]]:
    """Run the network on images resized to its configured input size."""
    cfg = network.config
    dim = cfg.input_width
    out: list[list[Detection]] = []
    for start in range(0, len(images), batch_size):
        chunk = images[start:start + batch_size]
        x = np.stack([resize_pixels(im.pixels, dim) for im in chunk])
        raw = network.forward(x, train=False)
        for k in range(len(chunk)):
            out.append(detections_from_raw(raw[k], network.head, prob_threshold, nms_threshold))
    return out


def evaluate_detections(per_image: Sequence[Sequence[Detection]], truths: Sequence[Sequence[BoxAnnotation]],
                        num_classes: int, iou_threshold: float = 0.5,
                        class_names: Sequence[str] = ()) -> EvalReport:
    results = []
    for dets, gts in zip(per_image, truths):
        for t in gts:
            if t.class_id >= num_classes:
                raise DataError(f"class id {t.class_id} exceeds the model's {num_classes} classes")
        results.append(ImageResult(list(dets), list(gts), match_detections(dets, gts, iou_threshold)))
    labeled: dict[int, list[tuple[float, bool]]] = {}
    counts: dict[int, int] = {}
    pooled: list[tuple[float, bool]] = []
    groups: dict[tuple[int, int], list[float]] = {}
    unknown: list[Detection] = []
    for r in results:
        for t in r.truths:
            counts[t.class_id] = counts.get(t.class_id, 0) + 1
        overlaps = (iou_matrix(np.array([d.box for d in r.detections]), np.array([t.box for t in r.truths]))
                    if r.detections and r.truths else None)
        for k, (d, tp) in enumerate(zip(r.detections, r.match.is_tp)):
            labeled.setdefault(d.class_id, []).append((d.probability, tp))
            pooled.append((d.probability, tp))
            if overlaps is not None and overlaps[k].max() >= iou_threshold:
                true_cls = r.truths[int(np.argmax(overlaps[k]))].class_id
                groups.setdefault((true_cls, d.class_id), []).append(d.probability)
            elif overlaps is None or overlaps[k].max() == 0:
                unknown.append(d)
    curves = {c: compute_pr_and_ap(labeled.get(c, []), n, iou_threshold) for c, n in sorted(counts.items())}
    combined = compute_pr_and_ap(pooled, sum(counts.values()), iou_threshold) if counts else None
    stats = {key: five_number_summary(v) for key, v in sorted(groups.items())}
    known = [d for r in results for d, tp in zip(r.detections, r.match.is_tp) if tp]
    threshold = probability_gap_analysis(known, unknown).threshold if known else None
    return EvalReport(curves, combined, stats, threshold, list(class_names), results, dict(sorted(groups.items())))


def evaluate(network, images: Sequence[AnnotatedImage], head=None, prob_floor: float = EVAL_FLOOR,
             iou_threshold: float = 0.5, class_names: Sequence[str] = ()) -> EvalReport:
    """Detect on every image at a low floor threshold and aggregate per class and pooled."""
    head = head or network.head
    per_image = detect_images(network, images, prob_floor, head.nms_overlap_threshold)
    return evaluate_detections(per_image, [im.boxes for im in images], head.num_classes,
                               iou_threshold, class_names)


# report output ---------------------------------------------------------------

def _csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def report_tables(report: EvalReport) -> dict[str, str]:
    curves = [(report.name(c), cv) for c, cv in report.curves.items()]
    if report.combined is not None:
        curves.append(("combined", report.combined))
    pr_rows = [(name, _fmt(r), _fmt(p)) for name, cv in curves for r, p, _ in cv.points]
    ap_rows = [(name, _fmt(cv.ap)) for name, cv in curves]
    stat_rows = [(f"{report.name(t)}->{report.name(p)}", *(_fmt(v) for v in s))
                 for (t, p), s in report.probability_stats.items()]
    thr = report.recommended_threshold
    return {
        "pr_curves.csv": _csv_text(["class", "recall", "precision"], pr_rows),
        "ap.csv": _csv_text(["class", "ap"], ap_rows),
        "probability_stats.csv": _csv_text(["class", "min", "q1", "median", "q3", "max"], stat_rows),
        "threshold.csv": _csv_text(["recommended_threshold"], [[_fmt(thr) if thr is not None else ""]]),
    }


def gap_tables(gap: GapReport, names: Sequence[str] = ()) -> dict[str, str]:
    def name(c):
        return names[c] if 0 <= c < len(names) else f"class{c}"
    rows = [(name(c), *(_fmt(v) for v in s)) for c, s in gap.known_stats.items()]
    if gap.unknown_stats is not None:
        rows.append(("unknown", *(_fmt(v) for v in gap.unknown_stats)))
    summary = [[_fmt(gap.min_known), _fmt(gap.max_unknown), _fmt(gap.gap),
                _fmt(gap.threshold) if gap.threshold is not None else "", int(gap.overlap)]]
    return {
        "gap_stats.csv": _csv_text(["class", "min", "q1", "median", "q3", "max"], rows),
        "gap_threshold.csv": _csv_text(["min_known", "max_unknown", "gap", "recommended_threshold",
                                        "overlap"], summary),
    }


def _svg_figure():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    matplotlib.rcParams["svg.hashsalt"] = "transferdet"
    matplotlib.rcParams["svg.fonttype"] = "none"
    return plt


def _save_svg(fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})


def write_pr_svg(curve: PRCurve, title: str, path: Path) -> None:
    plt = _svg_figure()
    fig, ax = plt.subplots(figsize=(4, 4))
    r = [0.0] + [p[0] for p in curve.points]
    p = [1.0] + [p[1] for p in curve.points]
    ax.plot(r, p, drawstyle="steps-post")
    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.02)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_title(f"{title} (AP {curve.ap * 100:.2f}%)")
    _save_svg(fig, path)
    plt.close(fig)


def write_boxplot_svg(groups: dict[str, Sequence[float]], path: Path, title: str = "detection probability") -> None:
    plt = _svg_figure()
    fig, ax = plt.subplots(figsize=(max(4, 0.8 * len(groups) + 2), 4))
    if groups:
        ax.boxplot(list(groups.values()), whis=(0, 100))
        ax.set_xticks(range(1, len(groups) + 1), list(groups.keys()), rotation=45, ha="right")
    ax.set_ylim(0, 1.02)
    ax.set_ylabel("probability")
    ax.set_title(title)
    fig.tight_layout()
    _save_svg(fig, path)
    plt.close(fig)


def write_report(report: EvalReport, out_dir: str | Path) -> list[Path]:
    """CSV tables plus one PR-curve SVG per class, a combined one and a box plot."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, text in report_tables(report).items():
        (out / name).write_text(text)
        written.append(out / name)
    for c, cv in report.curves.items():
        path = out / f"pr_{report.name(c)}.svg"
        write_pr_svg(cv, report.name(c), path)
        written.append(path)
    if report.combined is not None:
        write_pr_svg(report.combined, "combined", out / "pr_combined.svg")
        written.append(out / "pr_combined.svg")
    groups = {f"{report.name(t)}->{report.name(p)}": v for (t, p), v in report.probability_groups.items()}
    write_boxplot_svg(groups, out / "probability_boxplot.svg")
    written.append(out / "probability_boxplot.svg")
    return written
