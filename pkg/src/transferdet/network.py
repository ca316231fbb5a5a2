"""Runnable detector built from a NetworkConfig."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from . import tensor_core as tc
from .errors import ConfigurationError
from .netconfig import NetworkConfig
from .tensor_core import Parameter


def uniform_init(rng: np.random.Generator, filters: int, channels: int, k: int) -> np.ndarray:
    """Scaled uniform init in +-sqrt(1 / (channels * k * k))."""
    bound = math.sqrt(1.0 / (channels * k * k))
    return rng.uniform(-bound, bound, size=(filters, channels, k, k)).astype(np.float32)


class ConvLayer:
    def __init__(self, filters: int, channels: int, size: int, stride: int, pad: int,
                 activation: str, batch_normalize: bool):
        self.filters, self.channels, self.size = filters, channels, size
        self.stride, self.pad = stride, pad
        self.activation = activation
        self.batch_normalize = batch_normalize
        self.weights = Parameter(np.zeros((filters, channels, size, size), np.float32))
        if batch_normalize:
            self.gamma = Parameter(np.ones(filters, np.float32))
            self.beta = Parameter(np.zeros(filters, np.float32))
            self.running_mean = np.zeros(filters, np.float32)
            self.running_var = np.ones(filters, np.float32)
            self.bias = None
        else:
            self.bias = Parameter(np.zeros(filters, np.float32))
        self._cache = None

    def parameters(self) -> list[Parameter]:
        if self.batch_normalize:
            return [self.weights, self.gamma, self.beta]
        return [self.weights, self.bias]

    def arrays(self) -> dict[str, np.ndarray]:
        """Every persistent array, in weights-file order."""
        if self.batch_normalize:
            return {"gamma": self.gamma.value, "beta": self.beta.value,
                    "running_mean": self.running_mean, "running_var": self.running_var,
                    "weights": self.weights.value}
        return {"bias": self.bias.value, "weights": self.weights.value}

    def reinitialize(self, rng: np.random.Generator) -> None:
        self.weights.value[...] = uniform_init(rng, self.filters, self.channels, self.size)
        if self.batch_normalize:
            self.gamma.value[...] = 1
            self.beta.value[...] = 0
            self.running_mean[...] = 0
            self.running_var[...] = 1
        else:
            self.bias.value[...] = 0
        for p in self.parameters():
            p.zero_grad()
            p.momentum_buffer[...] = 0

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        bias = None if self.batch_normalize else self.bias.value
        z, conv_cache = tc.conv2d_forward(x, self.weights.value, bias, self.stride, self.pad)
        bn_cache = None
        if self.batch_normalize:
            z, bn_cache = tc.batchnorm_forward(z, self.gamma.value, self.beta.value,
                                               self.running_mean, self.running_var,
                                               "train" if train else "infer")
        pre = z
        if self.activation == "leaky":
            z = tc.leaky_relu(z)
        self._cache = (conv_cache, bn_cache, pre)
        return z

    def backward(self, grad: np.ndarray) -> np.ndarray:
        conv_cache, bn_cache, pre = self._cache
        if self.activation == "leaky":
            grad = tc.leaky_relu_backward(grad, pre)
        if bn_cache is not None:
            grad, gg, gb = tc.batchnorm_backward(grad, bn_cache)
            self.gamma.gradient += gg
            self.beta.gradient += gb
        grad, gw, gbias = tc.conv2d_backward(grad, conv_cache)
        self.weights.gradient += gw
        if gbias is not None:
            self.bias.gradient += gbias
        self._cache = None
        return grad


class MaxPoolLayer:
    def __init__(self):
        self._cache = None

    def parameters(self) -> list[Parameter]:
        return []

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        out, self._cache = tc.maxpool_forward(x)
        return out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        g = tc.maxpool_backward(grad, self._cache)
        self._cache = None
        return g


@dataclass
class LayerSummary:
    index: int
    kind: str
    output_shape: tuple[int, int, int]
    parameters: int


class Network:
    """Sequential conv/maxpool stack whose last conv feeds a region head.

    ``forward`` takes images ``[N, C, H, W]`` (or one ``[C, H, W]`` image) and
    returns the raw grid output ``[N, (classes + 5) * anchors, S, S]``.
    """

    def __init__(self, config: NetworkConfig):
        config.validate()
        self.config = config
        self.layers: list[ConvLayer | MaxPoolLayer] = []
        c = config.channels
        for spec in config.layers:
            if spec.kind == "convolutional":
                self.layers.append(ConvLayer(spec.filters, c, spec.size, spec.stride, spec.pad,
                                             spec.activation, spec.batch_normalize))
                c = spec.filters
            else:
                self.layers.append(MaxPoolLayer())

    @property
    def head(self):
        return self.config.head

    @property
    def conv_layers(self) -> list[tuple[int, ConvLayer]]:
        return [(i, l) for i, l in enumerate(self.layers) if isinstance(l, ConvLayer)]

    def parameters(self) -> list[Parameter]:
        return [p for l in self.layers for p in l.parameters()]

    def parameter_count(self) -> int:
        return sum(p.value.size for p in self.parameters())

    def summary(self, input_dim: int | None = None) -> list[LayerSummary]:
        h = w = input_dim or self.config.input_width
        c = self.config.channels
        rows = []
        for i, (spec, layer) in enumerate(zip(self.config.layers, self.layers)):
            if spec.kind == "convolutional":
                h = tc.conv_output_size(h, spec.size, spec.stride, spec.pad)
                w = tc.conv_output_size(w, spec.size, spec.stride, spec.pad)
                c = spec.filters
            else:
                h, w = h // 2, w // 2
            rows.append(LayerSummary(i, spec.kind, (c, h, w),
                                     sum(p.value.size for p in layer.parameters())))
        return rows

    def initialize(self, seed: int) -> "Network":
        rng = np.random.default_rng(seed)
        for _, layer in self.conv_layers:
            layer.reinitialize(rng)
        return self

    def forward(self, images: np.ndarray, train: bool = False) -> np.ndarray:
        single = images.ndim == 3
        if single:
            images = images[None]
        if images.ndim != 4 or images.shape[1] != self.config.channels:
            raise ConfigurationError(f"expected images [N, {self.config.channels}, H, W], "
                                     f"got {images.shape}")
        h, w = images.shape[2:]
        if h % 32 or w % 32:
            raise ConfigurationError(f"input {h}x{w} is not a multiple of 32")
        x = np.ascontiguousarray(images.astype(self.dtype, copy=False).transpose(1, 0, 2, 3))
        for layer in self.layers:
            x = layer.forward(x, train)
        out = np.ascontiguousarray(x.transpose(1, 0, 2, 3))
        return out[0] if single else out

    def backward(self, grad_raw: np.ndarray) -> None:
        """Accumulate parameter gradients from d(loss)/d(raw output)."""
        if grad_raw.ndim == 3:
            grad_raw = grad_raw[None]
        g = np.ascontiguousarray(grad_raw.astype(self.dtype, copy=False).transpose(1, 0, 2, 3))
        for layer in reversed(self.layers):
            g = layer.backward(g)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    @property
    def dtype(self) -> np.dtype:
        return self.layers[0].weights.value.dtype

    def astype(self, dtype) -> "Network":
        """Cast every array in place (float64 is used for gradient checking)."""
        for _, layer in self.conv_layers:
            for p in layer.parameters():
                p.value = p.value.astype(dtype)
                p.gradient = np.zeros_like(p.value)
                p.momentum_buffer = np.zeros_like(p.value)
            if layer.batch_normalize:
                layer.running_mean = layer.running_mean.astype(dtype)
                layer.running_var = layer.running_var.astype(dtype)
        return self

    # state snapshots ---------------------------------------------------
    def state(self) -> list[dict[str, np.ndarray]]:
        """Copies of all persistent arrays, one dict per conv layer."""
        return [{k: v.copy() for k, v in l.arrays().items()} for _, l in self.conv_layers]

    def load_state(self, state: list[dict[str, np.ndarray]]) -> None:
        convs = self.conv_layers
        if len(state) != len(convs):
            raise ConfigurationError("state does not match network layer count")
        for (_, layer), arrays in zip(convs, state):
            for key, dst in layer.arrays().items():
                if arrays[key].shape != dst.shape:
                    raise ConfigurationError(f"state array {key} has shape {arrays[key].shape}, "
                                             f"expected {dst.shape}")
                dst[...] = arrays[key]
            for p in layer.parameters():
                p.zero_grad()
                p.momentum_buffer[...] = 0

    def layer_checksum(self, layer_index: int) -> str:
        layer = self.layers[layer_index]
        if not isinstance(layer, ConvLayer):
            return ""
        h = hashlib.sha256()
        for arr in layer.arrays().values():
            h.update(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        return h.hexdigest()


def build_network(config: NetworkConfig, seed: int | None = 0) -> Network:
    """Validate ``config`` and return an initialised network.

    Raises ConfigurationError if the final layer breaks the (C + 5) * A rule.
    """
    net = Network(config)
    if seed is not None:
        net.initialize(seed)
    return net
