"""Per-pixel relevance maps.

Native methods: sensitivity, gradient x input, Sobel edge detection and a
uniform random map. Maps for methods computed elsewhere (deep Taylor,
DeepSHAP, ...) come in through SALM archives, see :mod:`salaudit.dataio`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ContractError
from .model import AffineOracle, Image, Model, forward, gradient, ground_truth_saliency

SIGNS = ("positive-only", "signed")

# Luminance weights for RGB input (ITU-R BT.601).
_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class SaliencyMap:
    values: np.ndarray
    method_id: str
    image_id: int = 0
    sign: str = "signed"

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ContractError(f"saliency map must be H x W, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ContractError(f"{self.method_id} map for image {self.image_id} has non-finite values")
        if self.sign not in SIGNS:
            raise ContractError(f"unknown sign capability {self.sign!r}")
        if self.sign == "positive-only" and np.any(v < 0):
            raise ContractError(f"positive-only {self.method_id} map has negative values")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class MethodDescriptor:
    method_id: str
    provenance: str = "native"
    sign: str = "signed"


NATIVE_METHODS = {
    "sensitivity": MethodDescriptor("sensitivity", "native", "positive-only"),
    "gradient-x-input": MethodDescriptor("gradient-x-input", "native", "signed"),
    "edge": MethodDescriptor("edge", "native", "positive-only"),
    "random": MethodDescriptor("random", "native", "positive-only"),
    "ground-truth": MethodDescriptor("ground-truth", "native", "signed"),
}


def sensitivity_map(model: Model, image: Image) -> SaliencyMap:
    cls = forward(model, image).predicted_class
    g = gradient(model, image, cls)
    return SaliencyMap(np.abs(g).max(axis=2), "sensitivity", image.id, "positive-only")


def gradient_x_input_map(model: Model, image: Image) -> SaliencyMap:
    """Channel-summed product of the logit gradient and the standardized input."""
    cls = forward(model, image).predicted_class
    g = gradient(model, image, cls)
    x = model.standardize(image.pixels)
    return SaliencyMap(np.sum(g * x, axis=2), "gradient-x-input", image.id, "signed")


def grayscale(pixels: np.ndarray) -> np.ndarray:
    """BT.601 luminance for RGB; channel mean for any other channel count."""
    if pixels.shape[2] == 3:
        return pixels @ _LUMA
    return pixels.mean(axis=2)


def edge_detection_map(image: Image) -> SaliencyMap:
    """Sobel gradient magnitude of the grayscale image, replicate borders."""
    gray = grayscale(image.pixels)
    gx = ndimage.sobel(gray, axis=1, mode="nearest")
    gy = ndimage.sobel(gray, axis=0, mode="nearest")
    return SaliencyMap(np.hypot(gx, gy), "edge", image.id, "positive-only")


def random_map(h: int, w: int, rng: np.random.Generator, image_id: int = 0) -> SaliencyMap:
    return SaliencyMap(rng.random((h, w)), "random", image_id, "positive-only")


def native_map(method_id: str, model: Model, image: Image, *, rng=None, perturbation=None) -> SaliencyMap:
    """Dispatch a native method by id."""
    if method_id == "sensitivity":
        return sensitivity_map(model, image)
    if method_id == "gradient-x-input":
        return gradient_x_input_map(model, image)
    if method_id == "edge":
        return edge_detection_map(image)
    if method_id == "random":
        if rng is None:
            raise ContractError("random map needs a seeded generator")
        h, w, _ = image.shape
        return random_map(h, w, rng, image.id)
    if method_id == "ground-truth":
        if not isinstance(model, AffineOracle):
            raise ContractError("ground-truth maps exist only for affine oracles")
        return ground_truth_saliency(model, image, perturbation)
    raise ContractError(f"unknown native method {method_id!r}")
