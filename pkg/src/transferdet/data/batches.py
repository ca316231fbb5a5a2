"""Batch assembly with a cap on hard-negative images."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

import cv2
import numpy as np

from ..errors import ConfigurationError
from .annotations import AnnotatedImage
from .augment import AugmentationConfig, augment


def compose_batch(dataset: Sequence[AnnotatedImage], batch_size: int = 64,
                  hard_negative_cap: float = 0.25, rng: np.random.Generator | None = None,
                  augment_cfg: AugmentationConfig | None = None,
                  threads: int = 1) -> list[AnnotatedImage]:
    """Sample ``batch_size`` images with replacement and augment each one.

    At most ``floor(cap * batch_size)`` hard negatives are admitted; once the
    cap is reached, further draws come from the positive images only.  Each
    slot is augmented with its own generator seeded from ``rng`` up front, so
    the result does not depend on ``threads``.
    """
    if not dataset:
        raise ConfigurationError("cannot compose a batch from an empty dataset")
    rng = rng or np.random.default_rng()
    positives = [i for i, s in enumerate(dataset) if not s.is_hard_negative]
    if not positives:
        raise ConfigurationError(
            "dataset holds only hard negatives; training would learn to detect nothing"
        )
    cap = int(np.floor(hard_negative_cap * batch_size))
    picks: list[int] = []
    negatives = 0
    for _ in range(batch_size):
        idx = int(rng.integers(len(dataset)))
        if dataset[idx].is_hard_negative:
            if negatives >= cap:
                idx = positives[int(rng.integers(len(positives)))]
            else:
                negatives += 1
        picks.append(idx)
    seeds = rng.integers(0, 2**63 - 1, size=batch_size)
    if augment_cfg is None:
        return [dataset[i] for i in picks]

    def work(slot: int) -> AnnotatedImage:
        return augment(dataset[picks[slot]], augment_cfg, np.random.default_rng(int(seeds[slot])))

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(work, range(batch_size)))
    return [work(k) for k in range(batch_size)]


def resize_pixels(pixels: np.ndarray, dim: int) -> np.ndarray:
    if pixels.shape[1] == dim and pixels.shape[2] == dim:
        return pixels.astype(np.float32, copy=False)
    hwc = np.ascontiguousarray(pixels.transpose(1, 2, 0), dtype=np.float32)
    out = cv2.resize(hwc, (dim, dim), interpolation=cv2.INTER_LINEAR)
    return np.ascontiguousarray(out.transpose(2, 0, 1))


def batch_to_tensor(samples: Sequence[AnnotatedImage], dim: int) -> np.ndarray:
    """Stack samples resized to ``dim x dim`` as ``[N, 3, dim, dim]``."""
    return np.stack([resize_pixels(s.pixels, dim) for s in samples])
