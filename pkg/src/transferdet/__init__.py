"""Grid/anchor single-shot detector in numpy, with head surgery for transfer learning."""
from .boxes import BoxAnnotation, Detection, iou, nms
from .errors import (ConfigurationError, DataError, DetectorError, DivergenceError, SurgeryError,
                     WeightsFormatError)
from .netconfig import LayerSpec, NetworkConfig, RegionHeadSpec, default_backbone, required_final_filters
from .network import Network, build_network
from .region import decode, forward_detect, region_loss
from .surgery import SurgeryPlan, apply_surgery
from .weights import WeightsFile, load_weights, save_weights

__version__ = "0.1.0"

__all__ = [
    "BoxAnnotation", "ConfigurationError", "DataError", "Detection", "DetectorError",
    "DivergenceError", "LayerSpec", "Network", "NetworkConfig", "RegionHeadSpec", "SurgeryError",
    "SurgeryPlan", "WeightsFile", "WeightsFormatError", "apply_surgery", "build_network", "decode",
    "default_backbone", "forward_detect", "iou", "load_weights", "nms", "region_loss",
    "required_final_filters", "save_weights",
]
