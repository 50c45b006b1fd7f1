"""Synthetic image suites paired with an affine oracle.

Images are blocky random colour fields with a little pixel noise and a
class-dependent tint, so edge maps have structure to find. Every value is
rounded to float32 so the in-memory suite equals its on-disk RAWT copy.
"""

from __future__ import annotations

import numpy as np

from .dataio import Dataset, dataset_mean
from .model import AffineOracle
from .rng import stream

_BLOCK = 4


def synthetic_images(seed: int, n_images: int, height: int, width: int, channels: int, n_classes: int) -> Dataset:
    pixels = np.empty((n_images, height, width, channels))
    labels = np.arange(n_images) % max(1, n_classes)
    bh, bw = -(-height // _BLOCK), -(-width // _BLOCK)
    for i in range(n_images):
        rng = stream(seed, "synth-image", i)
        coarse = rng.random((bh, bw, channels))
        img = np.kron(coarse, np.ones((_BLOCK, _BLOCK, 1)))[:height, :width]
        img = img + 0.05 * rng.standard_normal((height, width, channels))
        tint = 0.1 * (labels[i] / max(1, n_classes - 1) - 0.5)
        img[..., 0] += tint
        pixels[i] = np.clip(img, 0.0, 1.0)
    pixels = pixels.astype(np.float32).astype(np.float64)
    return Dataset(pixels, labels, np.arange(n_images), name="synthetic")


def synthetic_oracle(seed: int, dataset: Dataset, link: str = "identity", weight_scale: float | None = None) -> AffineOracle:
    """Random-weight oracle standardized with the dataset's own statistics.

    Identity-link oracles carry zero bias; sigmoid-link oracles are centred so
    the mean image sits at logit 0.
    """
    h, w, c = dataset.image_shape
    if weight_scale is None:
        weight_scale = 1.0 if link == "identity" else 8.0
    rng = stream(seed, "synth-oracle")
    weights = rng.standard_normal((h, w, c)) * weight_scale / np.sqrt(h * w * c)
    weights = weights.astype(np.float32).astype(np.float64)
    mean, std = dataset_mean(dataset)
    bias = 0.0
    if link == "sigmoid":
        bias = float(np.float32(-np.sum(weights * dataset.pixels.mean(axis=0))))
    return AffineOracle(weights, bias, link, mean=mean, std=np.maximum(std, 1e-6))


def synthetic_suite(
    seed: int,
    n_images: int = 200,
    height: int = 16,
    width: int = 16,
    channels: int = 3,
    n_classes: int = 10,
    link: str = "identity",
    weight_scale: float | None = None,
) -> tuple[Dataset, AffineOracle]:
    dataset = synthetic_images(seed, n_images, height, width, channels, n_classes)
    return dataset, synthetic_oracle(seed, dataset, link, weight_scale)
