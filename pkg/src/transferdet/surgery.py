"""Transplanting pretrained weights into a network with a new class/anchor head."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SurgeryError
from .netconfig import NetworkConfig, required_final_filters
from .network import Network
from .weights import WeightsFile, check_layer_dims


@dataclass(frozen=True)
class SurgeryPlan:
    source_classes: int
    target_classes: int
    num_anchors: int
    reinit_layers: tuple[int, ...]

    @classmethod
    def final_layer_only(cls, target_config: NetworkConfig, source_classes: int) -> "SurgeryPlan":
        return cls(source_classes, target_config.head.num_classes,
                   target_config.head.num_anchors, (len(target_config.layers) - 1,))

    def validate(self, target_config: NetworkConfig) -> None:
        final = len(target_config.layers) - 1
        if final not in self.reinit_layers:
            raise SurgeryError(f"final layer {final} must be re-initialised")
        for idx in self.reinit_layers:
            if not 0 <= idx < len(target_config.layers) or target_config.layers[idx].kind != "convolutional":
                raise SurgeryError(f"reinit index {idx} is not a convolutional layer")
        if self.target_classes != target_config.head.num_classes:
            raise SurgeryError(f"plan targets {self.target_classes} classes, config has "
                               f"{target_config.head.num_classes}")
        if self.num_anchors != target_config.head.num_anchors:
            raise SurgeryError(f"plan uses {self.num_anchors} anchors, config has "
                               f"{target_config.head.num_anchors}")


def apply_surgery(source: WeightsFile, target_config: NetworkConfig, plan: SurgeryPlan,
                  seed: int) -> Network:
    """Copy every layer outside ``plan.reinit_layers`` bit-exactly; re-draw the rest.

    The detection head itself carries no parameters; its classes and anchors
    always come from ``target_config``.
    """
    plan.validate(target_config)
    net = Network(target_config)  # enforces (C + 5) * A on the final layer
    convs = net.conv_layers
    if len(source.layers) != len(convs):
        raise SurgeryError(f"source has {len(source.layers)} convolutional layers, "
                           f"target has {len(convs)}")
    rng = np.random.default_rng(seed)
    for (idx, layer), lw in zip(convs, source.layers):
        if idx in plan.reinit_layers:
            layer.reinitialize(rng)
            continue
        check_layer_dims((layer.filters, layer.channels, layer.size, layer.batch_normalize),
                         lw, idx, SurgeryError)
        for key, dst in layer.arrays().items():
            dst[...] = lw.arrays[key]
    return net


def describe_filter_change(source: WeightsFile, target_config: NetworkConfig) -> str:
    before = source.layers[-1].filters
    after = required_final_filters(target_config.head.num_classes, target_config.head.num_anchors)
    return f"final filters {before} → {after}"
