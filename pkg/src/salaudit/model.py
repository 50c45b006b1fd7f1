"""Classifier evaluation and input gradients.

Two model families share one interface:

* :class:`Network`, a feedforward stack (conv2d, affine-channel, relu,
  maxpool2x2, flatten, dense, softmax) loaded from a manifest plus a raw
  float32 weight blob;
* :class:`AffineOracle`, a synthetic linear scorer whose pixel relevance is
  known in closed form.

All arrays are float64 and images are H x W x C in raw [0, 1] pixel space.
Models own their input standardization, so perturbations never need to know
about it. Gradients are taken with respect to the pre-softmax logit (or the
pre-link score for oracles) and include the 1/std factor of standardization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import ContractError, FormatError

MANIFEST_FORMAT = "salaudit-model"
LAYER_KINDS = ("conv2d", "affine-channel", "relu", "maxpool2x2", "flatten", "dense", "softmax")
LINKS = ("identity", "sigmoid")

# Stack size for batched evaluation of perturbed copies of one image.
_EVAL_CHUNK = 128


@dataclass(frozen=True)
class Image:
    pixels: np.ndarray
    label: int | None = None
    id: int = 0

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or min(px.shape) < 1:
            raise ContractError(f"image {self.id}: pixels must be H x W x C, got shape {px.shape}")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise ContractError(f"image {self.id}: pixel values must lie in [0, 1]")
        object.__setattr__(self, "pixels", px)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.pixels.shape  # type: ignore[return-value]


@dataclass(frozen=True)
class ClassScore:
    probabilities: np.ndarray
    predicted_class: int
    confidence: float


# ---------------------------------------------------------------------------
# layers


class Layer:
    kind = ""
    n_params = 0

    def output_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        return shape

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, Any]:
        raise NotImplementedError

    def backward(self, grad: np.ndarray, cache: Any) -> np.ndarray:
        raise NotImplementedError


class Conv2D(Layer):
    """Stride-1 convolution with symmetric zero padding.

    ``weight`` is stored O x I x kh x kw (output channel major).
    """

    kind = "conv2d"

    def __init__(self, weight: np.ndarray, bias: np.ndarray | None = None, padding: int = 0):
        self.weight = np.asarray(weight, dtype=np.float64)
        self.bias = None if bias is None else np.asarray(bias, dtype=np.float64)
        self.padding = int(padding)
        self.n_params = self.weight.size + (0 if self.bias is None else self.bias.size)

    def output_shape(self, shape):
        out_c, in_c, kh, kw = self.weight.shape
        if len(shape) != 3 or shape[2] != in_c:
            raise ValueError(f"expects H x W x {in_c} input, got {shape}")
        h = shape[0] + 2 * self.padding - kh + 1
        w = shape[1] + 2 * self.padding - kw + 1
        if h < 1 or w < 1:
            raise ValueError(f"kernel {kh}x{kw} larger than padded input {shape}")
        return (h, w, out_c)

    def forward(self, x):
        p = self.padding
        _, _, kh, kw = self.weight.shape
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
        win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # N, Ho, Wo, I, kh, kw
        y = np.tensordot(win, self.weight, axes=([3, 4, 5], [1, 2, 3]))
        if self.bias is not None:
            y = y + self.bias
        return y, x.shape

    def backward(self, grad, cache):
        in_shape = cache
        _, _, kh, kw = self.weight.shape
        p = self.padding
        gp = np.pad(grad, ((0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1), (0, 0)))
        win = sliding_window_view(gp, (kh, kw), axis=(1, 2))  # N, Hp, Wp, O, kh, kw
        flipped = self.weight[:, :, ::-1, ::-1]
        gxp = np.tensordot(win, flipped, axes=([3, 4, 5], [0, 2, 3]))
        return gxp[:, p : p + in_shape[1], p : p + in_shape[2], :]


class AffineChannel(Layer):
    """Per-channel ``scale * x + shift``; the inference-time form of batch norm."""

    kind = "affine-channel"

    def __init__(self, scale: np.ndarray, shift: np.ndarray):
        self.scale = np.asarray(scale, dtype=np.float64)
        self.shift = np.asarray(shift, dtype=np.float64)
        self.n_params = self.scale.size + self.shift.size

    def output_shape(self, shape):
        if shape[-1] != self.scale.size:
            raise ValueError(f"expects {self.scale.size} channels, got shape {shape}")
        return shape

    def forward(self, x):
        return x * self.scale + self.shift, None

    def backward(self, grad, cache):
        return grad * self.scale


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        mask = x > 0
        return np.where(mask, x, 0.0), mask

    def backward(self, grad, cache):
        return np.where(cache, grad, 0.0)


class MaxPool2x2(Layer):
    """2x2 window, stride 2. Odd trailing rows/columns are dropped."""

    kind = "maxpool2x2"

    def output_shape(self, shape):
        if len(shape) != 3 or shape[0] < 2 or shape[1] < 2:
            raise ValueError(f"expects H x W x C input with H, W >= 2, got {shape}")
        return (shape[0] // 2, shape[1] // 2, shape[2])

    def forward(self, x):
        n, h, w, c = x.shape
        ho, wo = h // 2, w // 2
        blocks = x[:, : 2 * ho, : 2 * wo, :].reshape(n, ho, 2, wo, 2, c)
        blocks = blocks.transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, 4)
        arg = blocks.argmax(axis=-1)
        y = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
        return y, (x.shape, arg)

    def backward(self, grad, cache):
        shape, arg = cache
        n, h, w, c = shape
        ho, wo = h // 2, w // 2
        routed = np.zeros((n, ho, wo, c, 4))
        np.put_along_axis(routed, arg[..., None], grad[..., None], axis=-1)
        routed = routed.reshape(n, ho, wo, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
        out = np.zeros(shape)
        out[:, : 2 * ho, : 2 * wo, :] = routed.reshape(n, 2 * ho, 2 * wo, c)
        return out


class Flatten(Layer):
    """Row-major H, W, C flattening (channel fastest)."""

    kind = "flatten"

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, grad, cache):
        return grad.reshape(cache)


class Dense(Layer):
    """``weight`` is out x in. Non-flat inputs are flattened implicitly."""

    kind = "dense"

    def __init__(self, weight: np.ndarray, bias: np.ndarray | None = None):
        self.weight = np.asarray(weight, dtype=np.float64)
        self.bias = None if bias is None else np.asarray(bias, dtype=np.float64)
        self.n_params = self.weight.size + (0 if self.bias is None else self.bias.size)

    def output_shape(self, shape):
        if int(np.prod(shape)) != self.weight.shape[1]:
            raise ValueError(f"expects {self.weight.shape[1]} input features, got shape {shape}")
        return (self.weight.shape[0],)

    def forward(self, x):
        flat = x.reshape(x.shape[0], -1)
        y = flat @ self.weight.T
        if self.bias is not None:
            y = y + self.bias
        return y, x.shape

    def backward(self, grad, cache):
        return (grad @ self.weight).reshape(cache)


class Softmax(Layer):
    """Marker for the final layer; :meth:`Model.probabilities` applies it."""

    kind = "softmax"


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# models


class Model:
    """Common interface; subclasses provide :meth:`logits` and :meth:`input_gradient`."""

    kind = ""
    input_shape: tuple[int, int, int]
    n_classes: int
    mean: np.ndarray
    std: np.ndarray

    def _check_batch(self, batch: np.ndarray) -> np.ndarray:
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim == 3:
            batch = batch[None]
        if batch.shape[1:] != tuple(self.input_shape):
            raise ContractError(
                f"input of shape {batch.shape[1:]} does not match model input {tuple(self.input_shape)}"
            )
        return batch

    def _check_class(self, class_index: int) -> int:
        if not 0 <= int(class_index) < self.n_classes:
            raise ContractError(f"class index {class_index} out of range for {self.n_classes} classes")
        return int(class_index)

    def standardize(self, batch: np.ndarray) -> np.ndarray:
        return (batch - self.mean) / self.std

    def logits(self, batch: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def probabilities(self, batch: np.ndarray) -> np.ndarray:
        return softmax(self.logits(batch))

    def class_scores(self, batch: np.ndarray, class_index: int) -> np.ndarray:
        """f(x) for each image in ``batch``: the probability of ``class_index``."""
        return self.probabilities(batch)[:, self._check_class(class_index)]

    def input_gradient(self, pixels: np.ndarray, class_index: int) -> np.ndarray:
        raise NotImplementedError

    def perturbed_scores(
        self,
        pixels: np.ndarray,
        class_index: int,
        pixel_ids: np.ndarray,
        values: np.ndarray,
        cumulative: bool = True,
    ) -> np.ndarray:
        """Scores of ``class_index`` on perturbed copies of one image.

        Entry 0 is the unperturbed score. With ``cumulative`` entry k has pixels
        ``pixel_ids[:k]`` replaced; otherwise entry k has only ``pixel_ids[k-1]``
        replaced. ``values`` holds one replacement row of C channels per id.
        """
        pixels = self._check_batch(pixels)[0]
        width = pixels.shape[1]
        ids = np.asarray(pixel_ids, dtype=np.int64)
        rows, cols = np.divmod(ids, width)
        n = ids.size
        out = np.empty(n + 1)
        out[0] = self.class_scores(pixels[None], class_index)[0]
        for start in range(0, n, _EVAL_CHUNK):
            stop = min(n, start + _EVAL_CHUNK)
            if cumulative:
                base = pixels.copy()
                base[rows[:start], cols[:start]] = values[:start]
                batch = np.repeat(base[None], stop - start, axis=0)
                for j in range(stop - start):
                    batch[j:, rows[start + j], cols[start + j]] = values[start + j]
            else:
                batch = np.repeat(pixels[None], stop - start, axis=0)
                batch[np.arange(stop - start), rows[start:stop], cols[start:stop]] = values[start:stop]
            out[start + 1 : stop + 1] = self.class_scores(batch, class_index)
        return out


class Network(Model):
    kind = "loaded-network"

    def __init__(
        self,
        layers: Sequence[Layer],
        input_shape: tuple[int, int, int],
        n_classes: int,
        mean: Sequence[float] | None = None,
        std: Sequence[float] | None = None,
    ):
        self.input_shape = tuple(int(s) for s in input_shape)  # type: ignore[assignment]
        channels = self.input_shape[2]
        self.mean = _channel_vector(mean, channels, 0.0, "mean")
        self.std = _channel_vector(std, channels, 1.0, "std")
        if np.any(self.std <= 0):
            raise ContractError("standardization std values must be strictly positive")
        self.layers = list(layers)
        self.n_classes = int(n_classes)
        if not self.layers or self.layers[-1].kind != "softmax":
            raise ContractError("network must end with a softmax layer")
        self.body = [layer for layer in self.layers if layer.kind != "softmax"]
        shape: tuple[int, ...] = self.input_shape
        for i, layer in enumerate(self.body):
            try:
                shape = layer.output_shape(shape)
            except ValueError as exc:
                raise ContractError(f"layer {i} ({layer.kind}): {exc}") from None
        if shape != (self.n_classes,):
            raise ContractError(f"network output shape {shape} does not match {self.n_classes} classes")

    def logits(self, batch):
        x = self.standardize(self._check_batch(batch))
        for layer in self.body:
            x, _ = layer.forward(x)
        return x

    def input_gradient(self, pixels, class_index):
        class_index = self._check_class(class_index)
        x = self.standardize(self._check_batch(pixels))
        caches = []
        for layer in self.body:
            x, cache = layer.forward(x)
            caches.append(cache)
        grad = np.zeros_like(x)
        grad[:, class_index] = 1.0
        for layer, cache in zip(reversed(self.body), reversed(caches)):
            grad = layer.backward(grad, cache)
        return grad[0] / self.std


class AffineOracle(Model):
    """score(x) = bias + sum(weights * x) over raw pixels, passed through ``link``.

    Reports a single class (index 0) whose confidence is the linked score.
    """

    n_classes = 1

    def __init__(
        self,
        weights: np.ndarray,
        bias: float = 0.0,
        link: str = "identity",
        mean: Sequence[float] | None = None,
        std: Sequence[float] | None = None,
    ):
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim != 3:
            raise ContractError(f"oracle weights must be H x W x C, got shape {w.shape}")
        if not np.all(np.isfinite(w)) or not np.isfinite(bias):
            raise ContractError("oracle weights and bias must be finite")
        if link not in LINKS:
            raise ContractError(f"unknown link {link!r}; expected one of {LINKS}")
        self.weights = w
        self.bias = float(bias)
        self.link = link
        self.input_shape = w.shape  # type: ignore[assignment]
        self.mean = _channel_vector(mean, w.shape[2], 0.0, "mean")
        self.std = _channel_vector(std, w.shape[2], 1.0, "std")
        if np.any(self.std <= 0):
            raise ContractError("standardization std values must be strictly positive")

    @property
    def kind(self) -> str:  # type: ignore[override]
        return "affine-oracle" if self.link == "identity" else "sigmoid-oracle"

    def _apply_link(self, s: np.ndarray) -> np.ndarray:
        return s if self.link == "identity" else expit(s)

    def logits(self, batch):
        batch = self._check_batch(batch)
        return (self.bias + np.tensordot(batch, self.weights, axes=3))[:, None]

    def probabilities(self, batch):
        return self._apply_link(self.logits(batch))

    def input_gradient(self, pixels, class_index):
        self._check_class(class_index)
        self._check_batch(pixels)
        return self.weights.copy()

    def perturbed_scores(self, pixels, class_index, pixel_ids, values, cumulative=True):
        # Linear in the pixels: each replacement shifts the score by w . (new - old).
        self._check_class(class_index)
        pixels = self._check_batch(pixels)[0]
        ids = np.asarray(pixel_ids, dtype=np.int64)
        rows, cols = np.divmod(ids, pixels.shape[1])
        base = self.bias + float(np.sum(self.weights * pixels))
        w_sel = self.weights[rows, cols]
        delta = np.einsum("ij,ij->i", w_sel, np.asarray(values, dtype=np.float64) - pixels[rows, cols])
        raw = np.empty(ids.size + 1)
        raw[0] = base
        raw[1:] = base + (np.cumsum(delta) if cumulative else delta)
        return self._apply_link(raw)


def _channel_vector(values, channels: int, default: float, name: str) -> np.ndarray:
    if values is None:
        return np.full(channels, default)
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size != channels:
        raise ContractError(f"standardization {name} has {v.size} entries for {channels} channels")
    return v


# ---------------------------------------------------------------------------
# operations


def forward(model: Model, image: Image) -> ClassScore:
    probs = model.probabilities(image.pixels[None])[0]
    k = int(np.argmax(probs))
    return ClassScore(probabilities=probs, predicted_class=k, confidence=float(probs[k]))


def gradient(model: Model, image: Image, class_index: int) -> np.ndarray:
    return model.input_gradient(image.pixels, class_index)


def make_affine_oracle(
    weights: np.ndarray,
    bias: float = 0.0,
    link: str = "identity",
    mean: Sequence[float] | None = None,
    std: Sequence[float] | None = None,
) -> AffineOracle:
    return AffineOracle(weights, bias, link, mean=mean, std=std)


def ground_truth_saliency(oracle: AffineOracle, image: Image, perturbation):
    """Exact single-pixel output drop of an identity-link oracle under mean perturbation."""
    from .saliency import SaliencyMap

    if not isinstance(oracle, AffineOracle) or oracle.link != "identity":
        raise ContractError("ground-truth saliency needs an identity-link affine oracle")
    if perturbation.kind != "mean":
        raise ContractError("ground-truth saliency is only exact for dataset-mean perturbation")
    mu = np.asarray(perturbation.mean, dtype=np.float64)
    values = np.sum(oracle.weights * (image.pixels - mu), axis=2)
    return SaliencyMap(values, method_id="ground-truth", image_id=image.id, sign="signed")


# ---------------------------------------------------------------------------
# manifest loading


@dataclass
class _LayerSpec:
    index: int
    kind: str
    params: dict = field(default_factory=dict)
    counts: list[int] = field(default_factory=list)


def load_model(manifest: Mapping[str, Any] | str, blob: bytes) -> Model:
    """Build a model from a manifest document and its little-endian float32 blob.

    The manifest is a mapping (or JSON text). ``kind`` is ``network``
    (default) or ``affine-oracle``; see the README for the full schema.
    """
    if isinstance(manifest, str):
        try:
            manifest = json.loads(manifest)
        except json.JSONDecodeError as exc:
            raise FormatError(f"model manifest is not valid JSON: {exc}") from None
    if not isinstance(manifest, Mapping):
        raise FormatError("model manifest must be a key/value document")
    if manifest.get("format", MANIFEST_FORMAT) != MANIFEST_FORMAT:
        raise FormatError(f"unexpected manifest format {manifest.get('format')!r}")
    if len(blob) % 4:
        raise FormatError(f"weight blob length {len(blob)} is not a multiple of 4 bytes")
    floats = np.frombuffer(blob, dtype="<f4").astype(np.float64)
    shape = _manifest_input(manifest)
    mean, std = _manifest_standardization(manifest, shape[2])
    kind = manifest.get("kind", "network")
    if kind == "affine-oracle":
        expected = int(np.prod(shape))
        if floats.size != expected:
            raise FormatError(f"weight blob holds {floats.size} floats, oracle needs {expected}")
        try:
            return AffineOracle(
                floats.reshape(shape),
                float(manifest.get("bias", 0.0)),
                str(manifest.get("link", "identity")),
                mean=mean,
                std=std,
            )
        except ContractError as exc:
            raise FormatError(f"affine oracle: {exc}") from None
    if kind != "network":
        raise FormatError(f"unknown model kind {kind!r}")
    return _load_network(manifest, floats, shape, mean, std)


def load_model_files(manifest_path: str | Path, weights_path: str | Path) -> Model:
    text = Path(manifest_path).read_text(encoding="utf-8")
    return load_model(text, Path(weights_path).read_bytes())


def _manifest_input(manifest: Mapping[str, Any]) -> tuple[int, int, int]:
    spec = manifest.get("input")
    try:
        shape = (int(spec["height"]), int(spec["width"]), int(spec["channels"]))
    except (TypeError, KeyError, ValueError):
        raise FormatError("manifest 'input' must give integer height, width and channels") from None
    if min(shape) < 1:
        raise FormatError(f"manifest input shape {shape} must be positive")
    return shape


def _manifest_standardization(manifest, channels):
    spec = manifest.get("standardization") or {}
    mean = spec.get("mean", [0.0] * channels)
    std = spec.get("std", [1.0] * channels)
    if len(mean) != channels or len(std) != channels:
        raise FormatError(f"standardization must give {channels} mean and std values")
    std = [float(s) for s in std]
    if any(not s > 0 for s in std):
        raise FormatError("standardization std values must be strictly positive")
    return [float(m) for m in mean], std


def _int_field(spec: Mapping[str, Any], key: str, index: int, default: int | None = None) -> int:
    if key not in spec:
        if default is None:
            raise FormatError(f"layer {index} ({spec.get('kind')}): missing '{key}'")
        return default
    try:
        return int(spec[key])
    except (TypeError, ValueError):
        raise FormatError(f"layer {index} ({spec.get('kind')}): '{key}' must be an integer") from None


def _parse_layer_specs(raw_layers) -> list[_LayerSpec]:
    specs = []
    for i, spec in enumerate(raw_layers):
        if not isinstance(spec, Mapping):
            raise FormatError(f"layer {i}: entry must be a key/value mapping")
        kind = spec.get("kind")
        if kind not in LAYER_KINDS:
            raise FormatError(f"layer {i}: unknown layer kind {kind!r}")
        ls = _LayerSpec(i, kind, dict(spec))
        if kind == "conv2d":
            cin = _int_field(spec, "in_channels", i)
            cout = _int_field(spec, "out_channels", i)
            kernel = spec.get("kernel", 3)
            kh, kw = (kernel, kernel) if isinstance(kernel, int) else tuple(kernel)
            ls.params.update(cin=cin, cout=cout, kh=int(kh), kw=int(kw), pad=_int_field(spec, "padding", i, 0))
            ls.counts = [cout * cin * int(kh) * int(kw)] + ([cout] if spec.get("bias", False) else [])
        elif kind == "affine-channel":
            c = _int_field(spec, "channels", i)
            ls.params.update(c=c)
            ls.counts = [c, c]
        elif kind == "dense":
            fin = _int_field(spec, "in_features", i)
            fout = _int_field(spec, "out_features", i)
            ls.params.update(fin=fin, fout=fout)
            ls.counts = [fout * fin] + ([fout] if spec.get("bias", False) else [])
        if any(c <= 0 for c in ls.counts):
            raise FormatError(f"layer {i} ({kind}): shape entries must be positive")
        specs.append(ls)
    return specs


def _load_network(manifest, floats, shape, mean, std) -> Network:
    raw_layers = manifest.get("layers")
    if not isinstance(raw_layers, list) or not raw_layers:
        raise FormatError("manifest must carry a non-empty ordered 'layers' list")
    specs = _parse_layer_specs(raw_layers)
    total = sum(sum(s.counts) for s in specs)
    if floats.size != total:
        raise FormatError(
            f"weight blob holds {floats.size} floats ({floats.size * 4} bytes); "
            f"manifest declares {total} ({total * 4} bytes)"
        )
    try:
        n_classes = int(manifest["classes"])
    except (KeyError, TypeError, ValueError):
        raise FormatError("manifest must declare integer 'classes'") from None

    layers: list[Layer] = []
    offset = 0
    current: tuple[int, ...] = shape
    for s in specs:
        if s.kind == "softmax" and s.index != len(specs) - 1:
            raise FormatError(f"layer {s.index} (softmax): softmax must be the final layer")
        if "offset" in s.params and s.counts and int(s.params["offset"]) != offset * 4:
            raise FormatError(
                f"layer {s.index} ({s.kind}): declared byte offset {s.params['offset']} "
                f"but parameters start at {offset * 4}"
            )
        chunks = []
        for c in s.counts:
            chunks.append(floats[offset : offset + c])
            offset += c
        p = s.params
        if s.kind == "conv2d":
            weight = chunks[0].reshape(p["cout"], p["cin"], p["kh"], p["kw"])
            layer: Layer = Conv2D(weight, chunks[1] if len(chunks) > 1 else None, p["pad"])
        elif s.kind == "affine-channel":
            layer = AffineChannel(chunks[0], chunks[1])
        elif s.kind == "dense":
            layer = Dense(chunks[0].reshape(p["fout"], p["fin"]), chunks[1] if len(chunks) > 1 else None)
        else:
            layer = {"relu": ReLU, "maxpool2x2": MaxPool2x2, "flatten": Flatten, "softmax": Softmax}[s.kind]()
        if s.kind != "softmax":
            try:
                current = layer.output_shape(current)
            except ValueError as exc:
                raise FormatError(f"layer {s.index} ({s.kind}): shape chain mismatch, {exc}") from None
        layers.append(layer)
    if layers[-1].kind != "softmax":
        raise FormatError("manifest layer list must end with softmax")
    if current != (n_classes,):
        raise FormatError(f"layer chain ends with shape {current}, expected ({n_classes},) class scores")
    return Network(layers, shape, n_classes, mean=mean, std=std)


def network_manifest(model: Network) -> tuple[dict, bytes]:
    """Inverse of :func:`load_model` for networks (weights rounded to float32)."""
    layers = []
    chunks = []
    offset = 0
    for layer in model.layers:
        entry: dict[str, Any] = {"kind": layer.kind}
        params: list[np.ndarray] = []
        if isinstance(layer, Conv2D):
            o, i, kh, kw = layer.weight.shape
            entry.update(in_channels=i, out_channels=o, kernel=[kh, kw], padding=layer.padding,
                         bias=layer.bias is not None)
            params = [layer.weight] + ([layer.bias] if layer.bias is not None else [])
        elif isinstance(layer, AffineChannel):
            entry.update(channels=layer.scale.size)
            params = [layer.scale, layer.shift]
        elif isinstance(layer, Dense):
            entry.update(in_features=layer.weight.shape[1], out_features=layer.weight.shape[0],
                         bias=layer.bias is not None)
            params = [layer.weight] + ([layer.bias] if layer.bias is not None else [])
        if params:
            entry["offset"] = offset * 4
            for p in params:
                chunks.append(np.asarray(p, dtype="<f4").reshape(-1))
                offset += p.size
        layers.append(entry)
    h, w, c = model.input_shape
    manifest = {
        "format": MANIFEST_FORMAT,
        "kind": "network",
        "input": {"height": h, "width": w, "channels": c},
        "classes": model.n_classes,
        "standardization": {"mean": model.mean.tolist(), "std": model.std.tolist()},
        "layers": layers,
    }
    blob = np.concatenate(chunks).tobytes() if chunks else b""
    return manifest, blob


def oracle_manifest(oracle: AffineOracle) -> tuple[dict, bytes]:
    h, w, c = oracle.input_shape
    manifest = {
        "format": MANIFEST_FORMAT,
        "kind": "affine-oracle",
        "input": {"height": h, "width": w, "channels": c},
        "bias": oracle.bias,
        "link": oracle.link,
        "standardization": {"mean": oracle.mean.tolist(), "std": oracle.std.tolist()},
    }
    return manifest, np.asarray(oracle.weights, dtype="<f4").tobytes()
