"""Binary weights files.

Layout (little-endian)::

    b"YLTW"  u32 version=1  u32 n_conv_layers
    per conv layer:
        u32 filters  u32 channels  u32 kernel  u32 batch_normalize
        f32[filters] gamma, beta, running_mean, running_var   (batch-normalised)
        f32[filters] bias                                     (otherwise)
        f32[filters*channels*kernel*kernel] weights
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import WeightsFormatError
from .netconfig import NetworkConfig
from .network import Network

MAGIC = b"YLTW"
VERSION = 1
BN_KEYS = ("gamma", "beta", "running_mean", "running_var")


@dataclass
class LayerWeights:
    filters: int
    channels: int
    kernel: int
    batch_normalize: bool
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def dims(self) -> tuple[int, int, int, bool]:
        return (self.filters, self.channels, self.kernel, self.batch_normalize)


@dataclass
class WeightsFile:
    layers: list[LayerWeights]
    version: int = VERSION

    @classmethod
    def from_network(cls, net: Network) -> "WeightsFile":
        out = []
        for _, l in net.conv_layers:
            out.append(LayerWeights(l.filters, l.channels, l.size, l.batch_normalize,
                                    {k: v.copy() for k, v in l.arrays().items()}))
        return cls(out)

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(MAGIC)
        buf.write(struct.pack("<II", self.version, len(self.layers)))
        for lw in self.layers:
            buf.write(struct.pack("<IIII", lw.filters, lw.channels, lw.kernel, int(lw.batch_normalize)))
            keys = BN_KEYS if lw.batch_normalize else ("bias",)
            for key in keys + ("weights",):
                buf.write(np.ascontiguousarray(lw.arrays[key], dtype="<f4").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "WeightsFile":
        view = memoryview(data)
        pos = 0

        def take(n: int, what: str) -> memoryview:
            nonlocal pos
            if pos + n > len(view):
                raise WeightsFormatError(f"truncated weights file while reading {what}")
            chunk = view[pos:pos + n]
            pos += n
            return chunk

        if bytes(take(4, "magic")) != MAGIC:
            raise WeightsFormatError("bad magic; not a weights file")
        version, count = struct.unpack("<II", take(8, "header"))
        if version != VERSION:
            raise WeightsFormatError(f"unsupported weights version {version}")
        layers = []
        for idx in range(count):
            f, c, k, bn = struct.unpack("<IIII", take(16, f"layer {idx} header"))
            if bn not in (0, 1) or k not in (1, 3) or f == 0 or c == 0:
                raise WeightsFormatError(f"layer {idx}: corrupt header ({f}, {c}, {k}, {bn})")
            lw = LayerWeights(f, c, k, bool(bn))
            keys = BN_KEYS if bn else ("bias",)
            for key in keys:
                lw.arrays[key] = np.frombuffer(take(4 * f, f"layer {idx} {key}"), dtype="<f4").astype(np.float32)
            n = f * c * k * k
            lw.arrays["weights"] = (np.frombuffer(take(4 * n, f"layer {idx} weights"), dtype="<f4")
                                    .astype(np.float32).reshape(f, c, k, k))
            layers.append(lw)
        if pos != len(view):
            raise WeightsFormatError(f"{len(view) - pos} trailing bytes after last layer")
        return cls(layers, version)

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def read(cls, path: str | Path) -> "WeightsFile":
        return cls.from_bytes(Path(path).read_bytes())


def check_layer_dims(expected: tuple, found: LayerWeights, layer_index: int, exc=WeightsFormatError) -> None:
    if found.dims != expected:
        raise exc(
            f"layer {layer_index}: file has (filters, channels, kernel, bn) = {found.dims}, "
            f"network expects {expected}"
        )


def save_weights(network: Network, path: str | Path) -> None:
    WeightsFile.from_network(network).save(path)


def load_weights(path: str | Path, config: NetworkConfig) -> Network:
    """Build a network for ``config`` and fill it from ``path``; nothing is returned on error."""
    wf = WeightsFile.read(path)
    net = Network(config)
    convs = net.conv_layers
    if len(wf.layers) != len(convs):
        raise WeightsFormatError(
            f"file has {len(wf.layers)} convolutional layers, config has {len(convs)}"
        )
    for (idx, layer), lw in zip(convs, wf.layers):
        check_layer_dims((layer.filters, layer.channels, layer.size, layer.batch_normalize), lw, idx)
    net.load_state([lw.arrays for lw in wf.layers])
    return net
