"""Pixel-perturbation fidelity metrics: AOPC (MoRF / LeRF) and faithfulness.

A "pixel" is one spatial location; all of its channels are replaced
together. f is the probability of the class predicted on the unperturbed
image and stays fixed for every perturbation step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ContractError
from .model import Image, Model, forward
from .reliability import pearson
from .rng import stream
from .saliency import SaliencyMap

PERTURBATION_KINDS = ("mean", "random-rgb")
ORDER_MODES = ("morf", "lerf", "random")


@dataclass(frozen=True)
class PerturbationSpec:
    """``kind`` is ``mean`` (replace with per-channel ``mean``) or ``random-rgb``."""

    kind: str
    mean: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind not in PERTURBATION_KINDS:
            raise ContractError(f"unknown perturbation kind {self.kind!r}")
        if self.mean is not None:
            mu = tuple(float(m) for m in np.asarray(self.mean).reshape(-1))
            if any(not 0.0 <= m <= 1.0 for m in mu):
                raise ContractError("dataset-mean perturbation values must lie in [0, 1]")
            object.__setattr__(self, "mean", mu)
        elif self.kind == "mean":
            raise ContractError("dataset-mean perturbation needs per-channel mean values")

    def replacement_values(self, n: int, channels: int, rng: np.random.Generator | None) -> np.ndarray:
        """n x C replacement rows, one per perturbed pixel in perturbation order."""
        if self.kind == "mean":
            if len(self.mean) != channels:
                raise ContractError(f"mean has {len(self.mean)} channels, image has {channels}")
            return np.tile(np.asarray(self.mean), (n, 1))
        if rng is None:
            raise ContractError("random-rgb perturbation needs a seeded generator")
        return rng.random((n, channels))


@dataclass(frozen=True)
class PixelOrdering:
    mode: str
    permutation: np.ndarray


@dataclass
class AopcResult:
    curve: np.ndarray
    order_mode: str
    perturbation: str
    aopc: dict[int, float] = field(default_factory=dict)

    def at(self, L: int) -> float:
        return aopc_from_curve(self.curve, L)


@dataclass
class FaithfulnessResult:
    score: float
    degenerate: bool
    pixel_sample: np.ndarray
    deltas: np.ndarray


@dataclass
class RandomBaseline:
    """AOPC curves of ``n`` random orderings for one image (n x (L+1))."""

    curves: np.ndarray
    perturbation: str

    def aopc(self, L: int) -> np.ndarray:
        return aopc_from_curve(self.curves, L)

    def mean_curve(self) -> np.ndarray:
        return self.curves.mean(axis=0)

    def mean(self, L: int) -> float:
        return float(self.aopc(L).mean())

    def band(self, L: int, coverage: float = 0.95) -> tuple[float, float]:
        tail = (1.0 - coverage) / 2.0
        lo, hi = np.quantile(self.aopc(L), [tail, 1.0 - tail])
        return float(lo), float(hi)


def aopc_from_curve(curve: np.ndarray, L: int):
    """(1 / (L + 1)) * sum_{k=1..L} drop_k, along the last axis."""
    curve = np.asarray(curve)
    if L < 0 or L >= curve.shape[-1]:
        raise ContractError(f"L={L} outside the computed curve (max {curve.shape[-1] - 1})")
    return curve[..., 1 : L + 1].sum(axis=-1) / (L + 1)


def pixel_ordering(saliency: SaliencyMap, mode: str) -> PixelOrdering:
    """MoRF: descending signed relevance; LeRF: ascending. Ties keep row-major id order."""
    flat = saliency.values.reshape(-1)
    if mode == "morf":
        perm = np.argsort(-flat, kind="stable")
    elif mode == "lerf":
        perm = np.argsort(flat, kind="stable")
    else:
        raise ContractError(f"order mode must be 'morf' or 'lerf', got {mode!r}")
    return PixelOrdering(mode, perm)


def random_ordering(n_pixels: int, rng: np.random.Generator) -> PixelOrdering:
    return PixelOrdering("random", rng.permutation(n_pixels))


def _check_ids(ids: np.ndarray, n_pixels: int) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    if ids.size and (ids.min() < 0 or ids.max() >= n_pixels):
        raise ContractError(f"pixel ids must lie in [0, {n_pixels})")
    if np.unique(ids).size != ids.size:
        raise ContractError("pixel ids must be distinct")
    return ids


def perturb(
    image: Image,
    pixel_ids: Sequence[int],
    spec: PerturbationSpec,
    rng: np.random.Generator | None = None,
) -> Image:
    """Copy of ``image`` with every listed pixel's channels replaced."""
    h, w, c = image.shape
    ids = _check_ids(pixel_ids, h * w)
    out = image.pixels.copy()
    rows, cols = np.divmod(ids, w)
    out[rows, cols] = spec.replacement_values(ids.size, c, rng)
    return Image(out, image.label, image.id)


def aopc_curve(
    model: Model,
    image: Image,
    ordering: PixelOrdering,
    L: int,
    spec: PerturbationSpec,
    rng: np.random.Generator | None = None,
    class_index: int | None = None,
    Ls: Sequence[int] = (),
) -> AopcResult:
    """Cumulative perturbation curve f(x0) - f(xk) for k = 0..L."""
    h, w, c = image.shape
    if not 0 <= L <= h * w:
        raise ContractError(f"L={L} must lie in [0, {h * w}] for a {h}x{w} image")
    if class_index is None:
        class_index = forward(model, image).predicted_class
    ids = _check_ids(ordering.permutation[:L], h * w)
    values = spec.replacement_values(L, c, rng)
    scores = model.perturbed_scores(image.pixels, class_index, ids, values, cumulative=True)
    curve = scores[0] - scores
    curve[0] = 0.0
    result = AopcResult(curve, ordering.mode, spec.kind)
    for l in sorted(set(Ls) | {L}):
        result.aopc[int(l)] = float(aopc_from_curve(curve, int(l)))
    return result


def single_pixel_deltas(
    model: Model,
    image: Image,
    pixel_sample: Sequence[int],
    spec: PerturbationSpec,
    rng: np.random.Generator | None = None,
    class_index: int | None = None,
) -> np.ndarray:
    """Delta_i = f(x) - f(x_i) with only pixel i perturbed, for each sampled i."""
    h, w, c = image.shape
    ids = _check_ids(pixel_sample, h * w)
    if class_index is None:
        class_index = forward(model, image).predicted_class
    values = spec.replacement_values(ids.size, c, rng)
    scores = model.perturbed_scores(image.pixels, class_index, ids, values, cumulative=False)
    return scores[0] - scores[1:]


def faithfulness_from_deltas(saliency: SaliencyMap, pixel_sample, deltas) -> FaithfulnessResult:
    ids = np.asarray(pixel_sample, dtype=np.int64)
    if ids.size < 2:
        raise ContractError("faithfulness needs at least 2 sampled pixels")
    relevance = saliency.values.reshape(-1)[ids]
    score, degenerate = pearson(relevance, deltas)
    return FaithfulnessResult(score, degenerate, ids, np.asarray(deltas))


def faithfulness(
    model: Model,
    image: Image,
    saliency: SaliencyMap,
    pixel_sample: Sequence[int],
    spec: PerturbationSpec,
    rng: np.random.Generator | None = None,
    class_index: int | None = None,
) -> FaithfulnessResult:
    if len(pixel_sample) < 2:
        raise ContractError("faithfulness needs at least 2 sampled pixels")
    deltas = single_pixel_deltas(model, image, pixel_sample, spec, rng, class_index)
    return faithfulness_from_deltas(saliency, pixel_sample, deltas)


def random_baseline(
    model: Model,
    image: Image,
    n_orderings: int,
    L: int,
    spec: PerturbationSpec,
    seed: int,
    class_index: int | None = None,
) -> RandomBaseline:
    """AOPC curves for ``n_orderings`` random permutations.

    Ordering j of image i is drawn from stream ``("rand-ordering", i, j)``;
    random-rgb replacement values come from ``("rand-ordering-rgb", i, j)``.
    """
    if n_orderings < 1:
        raise ContractError("need at least one random ordering")
    h, w, _ = image.shape
    if class_index is None:
        class_index = forward(model, image).predicted_class
    curves = np.empty((n_orderings, L + 1))
    for j in range(n_orderings):
        ordering = random_ordering(h * w, stream(seed, "rand-ordering", image.id, j))
        rgb = stream(seed, "rand-ordering-rgb", image.id, j) if spec.kind == "random-rgb" else None
        curves[j] = aopc_curve(model, image, ordering, L, spec, rgb, class_index).curve
    return RandomBaseline(curves, spec.kind)
