"""Network descriptions: layer specs, the region head, and the sectioned text format.

The text format is one ``[section]`` per layer followed by ``key=value`` lines::

    [net]
    width=96
    height=96

    [convolutional]
    filters=16
    size=3
    stride=1
    pad=1
    batch_normalize=1
    activation=leaky

    [maxpool]

    [region]
    classes=3
    num=5
    anchors=0.5,0.7, 1.1,1.4, ...
"""
from __future__ import annotations

import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

from .errors import ConfigurationError

TOTAL_STRIDE = 32


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "convolutional" | "maxpool"
    filters: int = 0
    size: int = 3
    stride: int = 1
    pad: int = 1
    activation: str = "leaky"
    batch_normalize: bool = False

    def __post_init__(self) -> None:
        if self.kind == "convolutional":
            if self.filters < 1:
                raise ConfigurationError(f"convolutional filters must be >= 1, got {self.filters}")
            if self.size not in (1, 3):
                raise ConfigurationError(f"kernel size must be 1 or 3, got {self.size}")
            if self.stride not in (1, 2):
                raise ConfigurationError(f"stride must be 1 or 2, got {self.stride}")
            if self.pad not in (0, 1):
                raise ConfigurationError(f"pad must be 0 or 1, got {self.pad}")
            if self.activation not in ("leaky", "linear"):
                raise ConfigurationError(f"unknown activation {self.activation!r}")
        elif self.kind == "maxpool":
            if self.size != 2 or self.stride != 2:
                raise ConfigurationError("maxpool must be size=2, stride=2")
        else:
            raise ConfigurationError(f"unknown layer kind {self.kind!r}")

    @classmethod
    def conv(cls, filters: int, size: int = 3, stride: int = 1, pad: int | None = None,
             activation: str = "leaky", batch_normalize: bool = True) -> "LayerSpec":
        if pad is None:
            pad = 1 if size == 3 else 0
        return cls("convolutional", filters, size, stride, pad, activation, batch_normalize)

    @classmethod
    def pool(cls) -> "LayerSpec":
        return cls("maxpool", size=2, stride=2, pad=0)


@dataclass(frozen=True)
class RegionHeadSpec:
    num_classes: int
    anchors: tuple[tuple[float, float], ...]
    nms_overlap_threshold: float = 0.45
    objectness_ignore_iou: float = 0.6

    def __post_init__(self) -> None:
        if self.num_classes < 1:
            raise ConfigurationError(f"num_classes must be >= 1, got {self.num_classes}")
        if not self.anchors:
            raise ConfigurationError("region head needs at least one anchor")
        for pw, ph in self.anchors:
            if not (pw > 0 and ph > 0):
                raise ConfigurationError(f"anchor dims must be positive, got ({pw}, {ph})")
        if not 0 < self.nms_overlap_threshold < 1:
            raise ConfigurationError("nms_overlap_threshold must lie in (0, 1)")

    @property
    def num_anchors(self) -> int:
        return len(self.anchors)

    @property
    def required_filters(self) -> int:
        return required_final_filters(self.num_classes, self.num_anchors)


def required_final_filters(num_classes: int, num_anchors: int) -> int:
    """Filter count of the last convolution feeding a region head: (C + 5) * A."""
    return (num_classes + 5) * num_anchors


@dataclass(frozen=True)
class NetworkConfig:
    input_width: int
    input_height: int
    layers: tuple[LayerSpec, ...]
    head: RegionHeadSpec
    channels: int = 3

    def validate(self) -> None:
        if self.input_width % TOTAL_STRIDE or self.input_height % TOTAL_STRIDE:
            raise ConfigurationError(
                f"input {self.input_width}x{self.input_height} not a multiple of {TOTAL_STRIDE}"
            )
        convs = self.conv_indices
        if not convs:
            raise ConfigurationError("network has no convolutional layer")
        if self.layers[-1].kind != "convolutional":
            raise ConfigurationError("the last layer before the region head must be convolutional")
        if self.downsampling != TOTAL_STRIDE:
            raise ConfigurationError(
                f"total downsampling is {self.downsampling}, expected {TOTAL_STRIDE}"
            )
        final = self.layers[-1]
        expected = self.head.required_filters
        if final.filters != expected:
            raise ConfigurationError(
                f"final convolutional layer has {final.filters} filters; "
                f"(classes + 5) * anchors = ({self.head.num_classes} + 5) * "
                f"{self.head.num_anchors} = {expected} required"
            )
        if final.activation != "linear" or final.batch_normalize:
            raise ConfigurationError("final convolutional layer must be linear without batchnorm")

    @property
    def conv_indices(self) -> list[int]:
        return [i for i, l in enumerate(self.layers) if l.kind == "convolutional"]

    @property
    def downsampling(self) -> int:
        d = 1
        for l in self.layers:
            d *= l.stride
        return d

    def grid_size(self, input_dim: int | None = None) -> int:
        return (input_dim or self.input_width) // TOTAL_STRIDE

    def with_head(self, num_classes: int, anchors: Sequence[tuple[float, float]]) -> "NetworkConfig":
        """Copy with a new head and the final layer resized to (C + 5) * A filters."""
        head = replace(self.head, num_classes=num_classes,
                       anchors=tuple((float(w), float(h)) for w, h in anchors))
        layers = list(self.layers)
        layers[-1] = replace(layers[-1], filters=head.required_filters)
        return replace(self, layers=tuple(layers), head=head)


def default_backbone(num_classes: int, anchors: Sequence[tuple[float, float]],
                     input_dim: int = 96, widths: Sequence[int] = (8, 16, 16, 32, 32, 64)) -> NetworkConfig:
    """Toy darknet-style stack: five conv+pool stages, one conv, a 1x1 head conv."""
    layers: list[LayerSpec] = []
    for w in widths[:5]:
        layers += [LayerSpec.conv(w), LayerSpec.pool()]
    for w in widths[5:]:
        layers.append(LayerSpec.conv(w))
    head = RegionHeadSpec(num_classes, tuple((float(a), float(b)) for a, b in anchors))
    layers.append(LayerSpec.conv(head.required_filters, size=1, activation="linear",
                                 batch_normalize=False))
    return NetworkConfig(input_dim, input_dim, tuple(layers), head)


_SECTION = re.compile(r"^\[\s*([A-Za-z_]+)\s*\]$")


def _parse_sections(text: str) -> list[tuple[str, dict[str, str], int]]:
    sections: list[tuple[str, dict[str, str], int]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _SECTION.match(line)
        if m:
            sections.append((m.group(1).lower(), {}, lineno))
            continue
        if "=" not in line or not sections:
            raise ConfigurationError(f"line {lineno}: expected key=value inside a section: {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        sections[-1][1][key.lower()] = value
    return sections


def _take(opts: dict[str, str], key: str, default, cast, where: str):
    if key not in opts:
        return default
    try:
        return cast(opts.pop(key))
    except ValueError as exc:
        raise ConfigurationError(f"{where}: bad value for {key}: {exc}") from None


def parse_network_config(text: str) -> NetworkConfig:
    width = height = None
    channels = 3
    layers: list[LayerSpec] = []
    head = None
    for kind, opts, lineno in _parse_sections(text):
        opts = dict(opts)
        where = f"[{kind}] at line {lineno}"
        if kind == "net":
            width = _take(opts, "width", None, int, where)
            height = _take(opts, "height", None, int, where)
            channels = _take(opts, "channels", 3, int, where)
        elif kind == "convolutional":
            size = _take(opts, "size", 3, int, where)
            layers.append(LayerSpec(
                "convolutional",
                filters=_take(opts, "filters", 0, int, where),
                size=size,
                stride=_take(opts, "stride", 1, int, where),
                pad=_take(opts, "pad", 1 if size == 3 else 0, int, where),
                activation=_take(opts, "activation", "leaky", str, where),
                batch_normalize=bool(_take(opts, "batch_normalize", 0, int, where)),
            ))
        elif kind == "maxpool":
            layers.append(LayerSpec("maxpool",
                                    size=_take(opts, "size", 2, int, where),
                                    stride=_take(opts, "stride", 2, int, where), pad=0))
        elif kind == "region":
            vals = [float(v) for v in _take(opts, "anchors", "", str, where).replace(",", " ").split()]
            if len(vals) % 2:
                raise ConfigurationError(f"{where}: odd number of anchor values")
            anchors = tuple(zip(vals[0::2], vals[1::2]))
            num = _take(opts, "num", len(anchors), int, where)
            if num != len(anchors):
                raise ConfigurationError(f"{where}: num={num} but {len(anchors)} anchors given")
            head = RegionHeadSpec(
                num_classes=_take(opts, "classes", 0, int, where),
                anchors=anchors,
                nms_overlap_threshold=_take(opts, "nms", 0.45, float, where),
                objectness_ignore_iou=_take(opts, "ignore_thresh", 0.6, float, where),
            )
        else:
            raise ConfigurationError(f"unknown section [{kind}] at line {lineno}")
        if opts:
            raise ConfigurationError(f"{where}: unknown keys {sorted(opts)}")
    if width is None or height is None:
        raise ConfigurationError("[net] section with width and height is required")
    if head is None:
        raise ConfigurationError("[region] section is required")
    return NetworkConfig(width, height, tuple(layers), head, channels)


def format_network_config(cfg: NetworkConfig) -> str:
    out = [f"[net]\nwidth={cfg.input_width}\nheight={cfg.input_height}\nchannels={cfg.channels}\n"]
    for l in cfg.layers:
        if l.kind == "maxpool":
            out.append("[maxpool]\nsize=2\nstride=2\n")
        else:
            out.append(
                f"[convolutional]\nbatch_normalize={int(l.batch_normalize)}\nfilters={l.filters}\n"
                f"size={l.size}\nstride={l.stride}\npad={l.pad}\nactivation={l.activation}\n"
            )
    h = cfg.head
    anchors = ", ".join(f"{w:.6g},{hh:.6g}" for w, hh in h.anchors)
    out.append(
        f"[region]\nclasses={h.num_classes}\nnum={h.num_anchors}\nanchors={anchors}\n"
        f"nms={h.nms_overlap_threshold:g}\nignore_thresh={h.objectness_ignore_iou:g}\n"
    )
    return "\n".join(out)


def load_network_config(path: str | Path) -> NetworkConfig:
    return parse_network_config(Path(path).read_text())


def save_network_config(cfg: NetworkConfig, path: str | Path) -> None:
    Path(path).write_text(format_network_config(cfg))
