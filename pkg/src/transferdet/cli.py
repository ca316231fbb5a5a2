"""Command-line entry point: ``transferdet <command> ...``.

Machine-readable results (CSV) go to stdout; progress and log text go to
stderr.  Exit codes: 0 success, 2 usage/configuration error, 3 data error,
4 training diverged, 5 iteration budget exhausted before the loss threshold.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import shlex
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence


from . import __version__
from .anchors import estimate_anchors
from .data.annotations import AnnotatedImage, load_image, read_manifest
from .data.augment import AugmentationConfig
from .data.synthetic import SyntheticSceneSpec, generate_synthetic_dataset
from .errors import ConfigurationError, DataError, DivergenceError, SurgeryError, WeightsFormatError
from .evaluation import (evaluate, gap_tables, probability_gap_analysis, detect_images, report_tables,
                         write_report)
from .netconfig import (NetworkConfig, default_backbone, load_network_config, save_network_config)
from .network import build_network
from .surgery import SurgeryPlan, apply_surgery, describe_filter_change
from .training import (CheckpointRecord, TrainingConfig, select_best_checkpoint, train)
from .weights import WeightsFile, load_weights, save_weights

log = logging.getLogger("transferdet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED, EXIT_BUDGET = 0, 2, 3, 4, 5


class UsageError(Exception):
    pass


# run configuration -------------------------------------------------------------

@dataclass
class PathsConfig:
    network: str = ""          # network config file; empty builds the default backbone
    weights: str = ""          # optional starting weights
    manifest: str = ""
    val_manifest: str = ""     # optional; scores every checkpoint when given
    out: str = ""


@dataclass
class NetSection:
    input_dim: int = 96
    num_anchors: int = 5
    widths: str = "8,16,16,32,32,64"
    init_seed: int = 0


@dataclass
class RunConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    net: NetSection = field(default_factory=NetSection)
    train: TrainingConfig = field(default_factory=TrainingConfig)
    augment: AugmentationConfig = field(default_factory=AugmentationConfig)

    SECTIONS = ("paths", "net", "train", "augment")

    def to_text(self) -> str:
        lines = []
        for name in self.SECTIONS:
            lines.append(f"[{name}]")
            section = getattr(self, name)
            for f in fields(section):
                lines.append(f"{f.name} = {_format_value(getattr(section, f.name))}")
            lines.append("")
        return "\n".join(lines)


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _convert(raw: str, current, key: str):
    try:
        if isinstance(current, bool):
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            return tuple(int(x) for x in raw.replace(" ", "").split(",") if x)
    except ValueError:
        raise UsageError(f"{key}: cannot parse {raw!r} as {type(current).__name__}") from None
    return raw.strip()


def parse_run_config(text: str, where: str = "config") -> dict[str, dict[str, str]]:
    """Sectioned ``key = value`` text -> {section: {key: raw value}}; '#' starts a comment."""
    out: dict[str, dict[str, str]] = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section != "args" and section not in RunConfig.SECTIONS:
                raise UsageError(f"{where}:{lineno}: unknown section [{section}]")
            out.setdefault(section, {})
            continue
        if section is None or "=" not in line:
            raise UsageError(f"{where}:{lineno}: expected key = value inside a section")
        key, value = (s.strip() for s in line.split("=", 1))
        out[section][key] = value
    out.pop("args", None)  # echo of command-line arguments in run logs
    return out


def build_run_config(file_values: dict[str, dict[str, str]],
                     overrides: dict[str, dict[str, str]]) -> RunConfig:
    """Defaults, then file values, then flag overrides; unknown keys are rejected."""
    rc = RunConfig()
    merged: dict[str, dict[str, str]] = {}
    for src in (file_values, overrides):
        for sec, kv in src.items():
            merged.setdefault(sec, {}).update(kv)
    for sec, kv in merged.items():
        section = getattr(rc, sec)
        known = {f.name: f for f in fields(section)}
        changes = {}
        for key, raw in kv.items():
            if key not in known:
                raise UsageError(f"unknown key {key!r} in [{sec}]")
            changes[key] = _convert(raw, getattr(section, key), f"{sec}.{key}")
        try:
            setattr(rc, sec, dataclasses.replace(section, **changes))
        except (ValueError, ConfigurationError) as exc:
            raise UsageError(f"[{sec}]: {exc}") from None
    return rc


def _flag_overrides(args: argparse.Namespace) -> dict[str, dict[str, str]]:
    out: dict[str, dict[str, str]] = {}
    for sec in RunConfig.SECTIONS:
        for f in fields(getattr(RunConfig(), sec)):
            v = getattr(args, f"{sec}__{f.name}", None)
            if v is not None:
                out.setdefault(sec, {})[f.name] = v
    for item in args.set or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise UsageError(f"--set expects section.key=value, got {item!r}")
        lhs, value = item.split("=", 1)
        sec, key = lhs.split(".", 1)
        if sec not in RunConfig.SECTIONS:
            raise UsageError(f"--set: unknown section {sec!r}")
        out.setdefault(sec, {})[key.strip()] = value
    if getattr(args, "threads", None) is not None:
        out.setdefault("train", {})["threads"] = str(args.threads)
    return out


def _add_run_config_flags(p: argparse.ArgumentParser) -> None:
    """One ``--key`` flag per run-config field; the section is implied by the key."""
    seen = set()
    for sec in RunConfig.SECTIONS:
        g = p.add_argument_group(f"[{sec}] overrides")
        for f in fields(getattr(RunConfig(), sec)):
            flag = "--" + f.name.replace("_", "-")
            if flag in seen or flag in ("--threads", "--seed"):
                flag = f"--{sec}-{f.name.replace('_', '-')}"
            seen.add(flag)
            g.add_argument(flag, dest=f"{sec}__{f.name}", default=None, metavar="V")
    p.add_argument("--seed", dest="train__seed", default=None, metavar="N")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override any config key")


def write_run_log(path: Path, command: str, argv: Sequence[str], args: argparse.Namespace,
                  rc: RunConfig | None = None) -> None:
    lines = [f"# transferdet {__version__}", f"# command: {command}",
             "# argv: " + " ".join(shlex.quote(a) for a in argv), "[args]"]
    for k, v in sorted(vars(args).items()):
        if k in ("func",) or "__" in k:
            continue
        lines.append(f"{k} = {v}")
    lines.append("")
    if rc is not None:
        lines.append(rc.to_text())
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines))
    log.info("run log: %s", path)


# helpers -----------------------------------------------------------------------

def _write_csv(rows: Sequence[Sequence], header: Sequence[str] | None, stream=None) -> None:
    w = csv.writer(stream or sys.stdout, lineterminator="\n")
    if header:
        w.writerow(header)
    w.writerows(rows)


def _network_config_for(weights: Path, explicit: str | None) -> NetworkConfig:
    candidates = [Path(explicit)] if explicit else [weights.with_suffix(".cfg"), weights.parent / "network.cfg"]
    for c in candidates:
        if c.exists():
            return load_network_config(c)
    raise DataError(f"no network config found for {weights} (tried {', '.join(map(str, candidates))})")


def _load_model(weights: str, network: str | None):
    w = Path(weights)
    if not w.exists():
        raise DataError(f"weights not found: {w}")
    return load_weights(w, _network_config_for(w, network))


def _parse_anchor_list(text: str) -> list[tuple[float, float]]:
    try:
        pairs = [tuple(float(v) for v in p.split(",")) for p in text.replace(" ", "").split(";") if p]
    except ValueError:
        raise UsageError(f"cannot parse anchors {text!r}") from None
    if not pairs or any(len(p) != 2 for p in pairs):
        raise UsageError("anchors must look like 'w,h;w,h;...'")
    return pairs  # type: ignore[return-value]


def _manifest_boxes(images: Sequence[AnnotatedImage]) -> list[tuple[float, float]]:
    return [(b.w, b.h) for im in images for b in im.boxes]


# commands ----------------------------------------------------------------------

def cmd_synth(args, argv) -> int:
    if args.classes < 1:
        raise UsageError("--classes must be >= 1")
    if min(args.train_per_class, args.val_per_class, args.distractors, args.hard_negatives) < 0:
        raise UsageError("counts must be >= 0")
    try:
        lo, hi = (float(v) for v in args.box_size.split(","))
    except ValueError:
        raise UsageError(f"cannot parse --box-size {args.box_size!r}") from None
    if not 0 < lo <= hi <= 1:
        raise UsageError("--box-size needs 0 < min <= max <= 1")
    out = Path(args.out)
    names = [f"brand_{k:02d}" for k in range(args.classes)]
    tmpl = SyntheticSceneSpec(width=args.size, height=args.size, num_boxes=args.boxes,
                              num_distractors=args.distractors, style=args.style, size_range=(lo, hi))
    try:
        out.mkdir(parents=True, exist_ok=True)
        train_m = generate_synthetic_dataset({n: args.train_per_class for n in names}, tmpl, out,
                                             args.seed, "train", args.hard_negatives)
        val_m = generate_synthetic_dataset({n: args.val_per_class for n in names}, tmpl, out,
                                           args.seed, "val")
        if args.unknown > 0:
            generate_synthetic_dataset({}, tmpl, out, args.seed, "test", args.unknown)
        write_run_log(out / "run.log", "synth", argv, args)
    except OSError as exc:
        raise DataError(f"cannot write dataset under {out}: {exc}") from None
    train_counts = _class_image_counts(train_m.image_paths, len(names))
    val_counts = _class_image_counts(val_m.image_paths, len(names))
    _write_csv([(n, train_counts[k], val_counts[k]) for k, n in enumerate(names)],
               ["class", "train_images", "val_images"])
    log.info("wrote %d training and %d validation images to %s", len(train_m), len(val_m), out)
    return EXIT_OK


def _class_image_counts(paths, n: int) -> list[int]:
    counts = [0] * n
    for p in paths:
        parts = p.stem.split("_")
        if len(parts) == 3 and parts[1].isdigit():
            counts[int(parts[1])] += 1
    return counts


def cmd_anchors(args, argv) -> int:
    if args.k < 1:
        raise UsageError("--k must be >= 1")
    images = read_manifest(args.manifest).load_all()
    boxes = _manifest_boxes(images)
    if len(boxes) < args.k:
        raise DataError(f"manifest holds {len(boxes)} boxes, fewer than k={args.k}")
    anchors = estimate_anchors(boxes, args.k, args.grid_size, seed=args.seed)
    _write_csv([(repr(float(w)), repr(float(h))) for w, h in anchors], ["w", "h"])
    return EXIT_OK


def cmd_surgery(args, argv) -> int:
    src_path = Path(args.weights)
    if not src_path.exists():
        raise DataError(f"weights not found: {src_path}")
    source_cfg = load_network_config(args.config)
    source = WeightsFile.read(src_path)
    if args.classes < 1:
        raise UsageError("--classes must be >= 1")
    anchors = _target_anchors(args, source_cfg)
    target_cfg = source_cfg.with_head(args.classes, anchors)
    plan = SurgeryPlan.final_layer_only(target_cfg, source_cfg.head.num_classes)
    net = apply_surgery(source, target_cfg, plan, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_weights(net, out)
    save_network_config(target_cfg, out.with_suffix(".cfg"))
    write_run_log(out.with_suffix(".log"), "surgery", argv, args)
    print(describe_filter_change(source, target_cfg))
    return EXIT_OK


def _target_anchors(args, source_cfg: NetworkConfig) -> list[tuple[float, float]]:
    spec = str(args.anchors)
    if not spec.isdigit():
        return _parse_anchor_list(spec)
    a = int(spec)
    if a < 1:
        raise UsageError("--anchors must be >= 1")
    if args.manifest:
        boxes = _manifest_boxes(read_manifest(args.manifest).load_all())
        return [tuple(map(float, x)) for x in estimate_anchors(boxes, a, source_cfg.grid_size(), args.seed)]
    if a <= source_cfg.head.num_anchors:
        return list(source_cfg.head.anchors[:a])
    raise UsageError(f"source has {source_cfg.head.num_anchors} anchors; pass --manifest to "
                     f"estimate {a} or give them explicitly as 'w,h;w,h;...'")


def _build_training_network(rc: RunConfig, images: Sequence[AnnotatedImage], class_names: Sequence[str]):
    if rc.paths.network:
        cfg = load_network_config(rc.paths.network)
    else:
        num_classes = len(class_names) or (1 + max((b.class_id for im in images for b in im.boxes), default=0))
        s = rc.net.input_dim // 32
        boxes = _manifest_boxes(images)
        if not boxes:
            raise DataError("training manifest has no annotated boxes")
        anchors = estimate_anchors(boxes, rc.net.num_anchors, s)
        widths = tuple(int(w) for w in rc.net.widths.split(","))
        cfg = default_backbone(num_classes, [tuple(map(float, a)) for a in anchors], rc.net.input_dim, widths)
    if rc.paths.weights:
        return load_weights(rc.paths.weights, cfg)
    return build_network(cfg, seed=rc.net.init_seed)


def cmd_train(args, argv) -> int:
    file_values = parse_run_config(Path(args.config).read_text(), args.config) if args.config else {}
    overrides = _flag_overrides(args)
    rc = build_run_config(file_values, overrides)
    if rc.paths.network:
        # a given network description fixes the input size
        rc.net = dataclasses.replace(rc.net, input_dim=load_network_config(rc.paths.network).input_width)
    explicit = {**file_values.get("train", {}), **overrides.get("train", {})}
    if "base_input_dim" in explicit and rc.train.base_input_dim != rc.net.input_dim:
        raise UsageError("train.base_input_dim must equal net.input_dim")
    rc.train = dataclasses.replace(rc.train, base_input_dim=rc.net.input_dim)
    if not rc.paths.manifest:
        raise UsageError("no training manifest (set paths.manifest or --manifest)")
    if not rc.paths.out:
        raise UsageError("no output directory (set paths.out or --out)")
    out = Path(rc.paths.out)
    out.mkdir(parents=True, exist_ok=True)
    write_run_log(out / "run.log", "train", argv, args, rc)
    manifest = read_manifest(rc.paths.manifest)
    images = manifest.load_all()
    if not images and rc.train.max_iterations > 0:
        raise DataError("training manifest is empty")
    net = _build_training_network(rc, images, manifest.class_names)
    save_network_config(net.config, out / "network.cfg")
    try:
        state, checkpoints = train(net, images, rc.train, rc.augment, out)
    except DivergenceError as exc:
        log.error("%s", exc)
        return EXIT_DIVERGED
    if rc.paths.val_manifest:
        val = read_manifest(rc.paths.val_manifest)
        _score_checkpoints(checkpoints, net.config, val.load_all(), val.class_names)
    _write_checkpoint_table(checkpoints, out / "checkpoints.csv")
    log.info("stopped at iteration %d: %s (avg loss %s)", state.iteration, state.status,
             f"{state.avg_loss:.4f}" if state.avg_loss is not None else "n/a")
    if state.status == "budget" and rc.train.stop_on_loss and rc.train.max_iterations > 0:
        return EXIT_BUDGET
    return EXIT_OK


def _score_checkpoints(checkpoints: Sequence[CheckpointRecord], cfg: NetworkConfig,
                       images: Sequence[AnnotatedImage], names: Sequence[str]) -> None:
    net = build_network(cfg, seed=None)
    for cp in checkpoints:
        net.load_state([lw.arrays for lw in cp.weights.layers])
        cp.validation_ap = evaluate(net, images, class_names=names).combined_ap or 0.0


def _write_checkpoint_table(checkpoints: Sequence[CheckpointRecord], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        _write_csv([(cp.iteration, cp.path.name if cp.path else "",
                     f"{cp.avg_loss:.6g}" if cp.avg_loss is not None else "",
                     f"{cp.validation_ap:.6f}" if cp.validation_ap is not None else "")
                    for cp in checkpoints], ["iteration", "file", "avg_loss", "validation_ap"], fh)


def cmd_eval(args, argv) -> int:
    net = _load_model(args.weights, args.network)
    manifest = read_manifest(args.manifest)
    report = evaluate(net, manifest.load_all(), prob_floor=args.prob_floor, class_names=manifest.class_names)
    if args.report:
        write_report(report, args.report)
        write_run_log(Path(args.report) / "run.log", "eval", argv, args)
    sys.stdout.write(report_tables(report)["ap.csv"])
    return EXIT_OK


def cmd_select(args, argv) -> int:
    cdir = Path(args.checkpoints)
    files = sorted(cdir.glob("model_*.ylw"), key=lambda p: int(p.stem.split("_")[1]))
    if not files:
        raise DataError(f"no model_<iteration>.ylw files in {cdir}")
    manifest = read_manifest(args.manifest)
    images = manifest.load_all()
    records = []
    for f in files:
        net = _load_model(str(f), args.network)
        ap = evaluate(net, images, class_names=manifest.class_names).combined_ap or 0.0
        records.append(CheckpointRecord(int(f.stem.split("_")[1]), f, ap))
        log.info("%s: combined AP %.4f", f.name, ap)
    best = select_best_checkpoint(records)
    _write_csv([(r.iteration, r.path.name, f"{r.validation_ap:.6f}", int(r is best)) for r in records],
               ["iteration", "file", "validation_ap", "selected"])
    log.info("selected %s", best.path)
    return EXIT_OK


def cmd_detect(args, argv) -> int:
    net = _load_model(args.weights, args.network)
    image = Path(args.image)
    if not image.exists():
        raise DataError(f"image not found: {image}")
    pixels = load_image(image)
    im = AnnotatedImage(pixels, [], False, str(image))
    dets = detect_images(net, [im], args.prob_threshold)[0]
    _write_csv([(d.class_id, repr(d.cx), repr(d.cy), repr(d.w), repr(d.h), repr(d.probability))
                for d in dets], None)
    return EXIT_OK


def gap_from_models(net, known_images, unknown_images, prob_floor: float = 0.005):
    """Known: true-positive detections on annotated scenes; unknown: every detection on unknown scenes."""
    known_report = evaluate(net, known_images, prob_floor=prob_floor)
    unknown = [d for dets in detect_images(net, unknown_images, prob_floor) for d in dets]
    return probability_gap_analysis(known_report.true_positive_detections(), unknown)


def cmd_gap(args, argv) -> int:
    net = _load_model(args.weights, args.network)
    known = read_manifest(args.known)
    unknown = read_manifest(args.unknown)
    k_images = known.load_all()
    if not any(im.boxes for im in k_images):
        raise DataError("known-class manifest has no annotated boxes")
    try:
        gap = gap_from_models(net, k_images, unknown.load_all(), args.prob_floor)
    except ValueError as exc:
        raise DataError(f"{exc}: the model finds none of the known objects") from None
    tables = gap_tables(gap, known.class_names)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for name, text in tables.items():
            (out / name).write_text(text)
        write_run_log(out / "run.log", "gap", argv, args)
    sys.stdout.write(tables["gap_threshold.csv"])
    if gap.overlap:
        log.warning("known and unknown probabilities overlap; no separating threshold")
    return EXIT_OK


# parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="transferdet", description="Train, re-head and evaluate a small grid/anchor detector.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic brand dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--classes", type=int, required=True)
    s.add_argument("--train-per-class", type=int, default=15)
    s.add_argument("--val-per-class", type=int, default=5)
    s.add_argument("--distractors", type=int, default=0)
    s.add_argument("--hard-negatives", type=int, default=0)
    s.add_argument("--unknown", type=int, default=0, help="distractor-only scenes in test/")
    s.add_argument("--boxes", type=int, default=1, help="planted boxes per scene")
    s.add_argument("--size", type=int, default=96)
    s.add_argument("--box-size", default="0.18,0.30", help="min,max box side as a fraction of the image")
    s.add_argument("--style", choices=("brand", "shape"), default="brand")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("anchors", help="k-means anchor shapes from a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--k", type=int, default=5)
    s.add_argument("--grid-size", type=int, default=13)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_anchors)

    s = sub.add_parser("surgery", help="re-head pretrained weights for a new class set")
    s.add_argument("--weights", required=True)
    s.add_argument("--config", required=True, help="network config of the source weights")
    s.add_argument("--classes", type=int, required=True)
    s.add_argument("--anchors", default="5", help="count, or explicit 'w,h;w,h;...'")
    s.add_argument("--manifest", help="estimate anchors from this manifest")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_surgery)

    s = sub.add_parser("train", help="train or fine-tune")
    s.add_argument("--config", help="sectioned key=value run config")
    s.add_argument("--threads", type=int)
    _add_run_config_flags(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="precision/recall/AP report")
    s.add_argument("--weights", required=True)
    s.add_argument("--network")
    s.add_argument("--manifest", required=True)
    s.add_argument("--report")
    s.add_argument("--prob-floor", type=float, default=0.005)
    s.add_argument("--threads", type=int, default=1)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("select", help="pick the checkpoint before validation AP first drops")
    s.add_argument("--checkpoints", required=True)
    s.add_argument("--network")
    s.add_argument("--manifest", required=True)
    s.add_argument("--threads", type=int, default=1)
    s.set_defaults(func=cmd_select)

    s = sub.add_parser("detect", help="detect objects in one image")
    s.add_argument("--weights", required=True)
    s.add_argument("--network")
    s.add_argument("--image", required=True)
    s.add_argument("--prob-threshold", type=float, default=0.5)
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("gap", help="probability gap between known classes and unknown objects")
    s.add_argument("--weights", required=True)
    s.add_argument("--network")
    s.add_argument("--known", required=True)
    s.add_argument("--unknown", required=True)
    s.add_argument("--out")
    s.add_argument("--prob-floor", type=float, default=0.005)
    s.add_argument("--threads", type=int, default=1)
    s.set_defaults(func=cmd_gap)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args, argv)
    except (UsageError, ConfigurationError) as exc:
        print(f"transferdet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, WeightsFormatError, SurgeryError, FileNotFoundError) as exc:
        print(f"transferdet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"transferdet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
