from .annotations import (AnnotatedImage, DatasetManifest, parse_annotation_line, read_label_file,
                          read_manifest, write_label_file)
from .augment import (AugmentationConfig, augment, augment_with_params, choose_input_dim, hflip,
                      hue_shift, input_dim_candidates)
from .batches import batch_to_tensor, compose_batch
from .synthetic import (SyntheticSceneSpec, brand_signature, generate_hard_negatives, generate_scenes,
                        generate_synthetic_dataset, generate_synthetic_scene)

__all__ = [
    "AnnotatedImage", "AugmentationConfig", "DatasetManifest", "SyntheticSceneSpec", "augment",
    "augment_with_params", "batch_to_tensor", "brand_signature", "choose_input_dim", "compose_batch",
    "generate_hard_negatives", "generate_scenes", "generate_synthetic_dataset",
    "generate_synthetic_scene", "hflip", "hue_shift", "input_dim_candidates", "parse_annotation_line",
    "read_label_file", "read_manifest", "write_label_file",
]
