"""Dataset ingestion and the file formats shared across stages.

Binary layouts (all integers and floats little-endian):

SALM saliency archive::

    b"SALM" | u16 version (1) | u16 len | method-id utf-8 | u32 n | u32 h | u32 w
    | n*h*w float32 maps in image-id order

with a JSON sidecar ``<archive>.ids.json`` listing ``image_ids`` (and the
method's ``sign`` capability).

RAWT raw tensor dataset::

    b"RAWT" | u16 version (1) | u16 len | name utf-8 | u32 n | u32 h | u32 w | u32 c
    | n int32 labels (-1 = none) | n*h*w*c float32 pixels in [0, 1], H x W x C order

CIFAR-10 binary batches are read bit-exactly: 3073-byte records of one
label byte followed by 1024 R, 1024 G and 1024 B bytes in row-major order.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import ContractError, FormatError
from .model import Image
from .reliability import ScoreRow, ScoreTable
from .saliency import SIGNS, SaliencyMap

CIFAR_RECORD = 3073
CIFAR_SIDE = 32
SALM_MAGIC = b"SALM"
RAWT_MAGIC = b"RAWT"
FORMAT_VERSION = 1
SCORE_HEADER = ["image_id", "class_label", "confidence", "method_id", "metric_variant", "score"]


def fmt_float(x: float) -> str:
    """Nine significant digits, the precision of every CSV written here."""
    return f"{x:.9g}"


@dataclass
class Dataset:
    """Images stored as one N x H x W x C float64 array in raw [0, 1] space."""

    pixels: np.ndarray
    labels: np.ndarray
    ids: np.ndarray
    class_names: list[str] | None = None
    name: str = ""
    _stats: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 4 or self.pixels.shape[0] == 0:
            raise ContractError(f"dataset pixels must be N x H x W x C with N >= 1, got {self.pixels.shape}")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.ids = np.asarray(self.ids, dtype=np.int64)

    def __len__(self) -> int:
        return self.pixels.shape[0]

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.pixels.shape[1:])  # type: ignore[return-value]

    def image(self, index: int) -> Image:
        label = int(self.labels[index])
        return Image(self.pixels[index], None if label < 0 else label, int(self.ids[index]))

    def __iter__(self) -> Iterator[Image]:
        for i in range(len(self)):
            yield self.image(i)


def dataset_mean(dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and population std over every pixel of every image."""
    if len(dataset) == 0:
        raise ContractError("dataset is empty")
    flat = dataset.pixels.reshape(-1, dataset.pixels.shape[-1])
    return flat.mean(axis=0), flat.std(axis=0)


# ---------------------------------------------------------------------------
# CIFAR-10


def parse_cifar10_bytes(data: bytes, source: str = "<bytes>", first_id: int = 0):
    if len(data) % CIFAR_RECORD:
        raise FormatError(f"{source}: length {len(data)} is not a multiple of {CIFAR_RECORD} bytes")
    records = np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise FormatError(f"{source}: record {bad[0]} has label {labels[bad[0]]} > 9")
    planes = records[:, 1:].reshape(-1, 3, CIFAR_SIDE, CIFAR_SIDE)
    pixels = planes.transpose(0, 2, 3, 1).astype(np.float64) / 255.0
    ids = np.arange(first_id, first_id + len(records))
    return pixels, labels, ids


CIFAR10_CLASSES = ["airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck"]


def load_cifar10(paths: Sequence[str | Path]) -> Dataset:
    """Concatenate binary batches; ids follow file order, then record order."""
    if not paths:
        raise ContractError("no CIFAR-10 batch files given")
    parts = []
    next_id = 0
    for p in paths:
        pixels, labels, ids = parse_cifar10_bytes(Path(p).read_bytes(), str(p), next_id)
        next_id += len(ids)
        parts.append((pixels, labels, ids))
    return Dataset(
        np.concatenate([p[0] for p in parts]),
        np.concatenate([p[1] for p in parts]),
        np.concatenate([p[2] for p in parts]),
        class_names=list(CIFAR10_CLASSES),
        name="cifar10",
    )


# ---------------------------------------------------------------------------
# shared binary envelope


def _pack_header(magic: bytes, name: str, dims: Sequence[int]) -> bytes:
    name_bytes = name.encode("utf-8")
    if len(name_bytes) > 0xFFFF:
        raise ContractError("identifier too long for archive header")
    return (
        magic
        + struct.pack("<HH", FORMAT_VERSION, len(name_bytes))
        + name_bytes
        + struct.pack(f"<{len(dims)}I", *dims)
    )


def _unpack_header(data: bytes, magic: bytes, n_dims: int, source: str) -> tuple[str, tuple[int, ...], int]:
    if len(data) < 8 or data[:4] != magic:
        raise FormatError(f"{source}: bad magic, expected {magic.decode()}")
    version, name_len = struct.unpack_from("<HH", data, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"{source}: unsupported version {version}")
    pos = 8 + name_len
    if len(data) < pos + 4 * n_dims:
        raise FormatError(f"{source}: truncated header")
    try:
        name = data[8:pos].decode("utf-8")
    except UnicodeDecodeError:
        raise FormatError(f"{source}: identifier is not valid UTF-8") from None
    dims = struct.unpack_from(f"<{n_dims}I", data, pos)
    return name, dims, pos + 4 * n_dims


def _read_payload(data: bytes, offset: int, dtype: str, count: int, source: str) -> np.ndarray:
    need = offset + np.dtype(dtype).itemsize * count
    if len(data) < need:
        raise FormatError(f"{source}: truncated payload, expected {need} bytes, found {len(data)}")
    if len(data) > need:
        raise FormatError(f"{source}: {len(data) - need} trailing bytes after payload")
    return np.frombuffer(data, dtype=dtype, count=count, offset=offset)


# ---------------------------------------------------------------------------
# SALM saliency archives


def encode_saliency_archive(maps: Sequence[SaliencyMap]) -> bytes:
    if not maps:
        raise ContractError("cannot write an empty saliency archive")
    method = maps[0].method_id
    shape = maps[0].values.shape
    for m in maps:
        if m.method_id != method or m.values.shape != shape:
            raise ContractError("all maps in an archive must share method id and dimensions")
    payload = np.stack([m.values for m in maps]).astype("<f4")
    return _pack_header(SALM_MAGIC, method, (len(maps), shape[0], shape[1])) + payload.tobytes()


def decode_saliency_archive(
    data: bytes, image_ids: Sequence[int] | None = None, sign: str = "signed", source: str = "<bytes>"
) -> list[SaliencyMap]:
    method, (n, h, w), offset = _unpack_header(data, SALM_MAGIC, 3, source)
    values = _read_payload(data, offset, "<f4", n * h * w, source).reshape(n, h, w).astype(np.float64)
    if image_ids is None:
        image_ids = range(n)
    if len(image_ids) != n:
        raise FormatError(f"{source}: sidecar lists {len(image_ids)} image ids for {n} maps")
    if sign not in SIGNS:
        raise FormatError(f"{source}: unknown sign capability {sign!r}")
    try:
        return [SaliencyMap(values[i], method, int(image_ids[i]), sign) for i in range(n)]
    except ContractError as exc:
        raise FormatError(f"{source}: {exc}") from None


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".ids.json")


def write_saliency_archive(maps: Sequence[SaliencyMap], path: str | Path) -> None:
    path = Path(path)
    path.write_bytes(encode_saliency_archive(maps))
    sidecar = {"method_id": maps[0].method_id, "sign": maps[0].sign, "image_ids": [int(m.image_id) for m in maps]}
    sidecar_path(path).write_text(json.dumps(sidecar) + "\n", encoding="utf-8")


def read_saliency_archive(path: str | Path) -> list[SaliencyMap]:
    path = Path(path)
    ids = None
    sign = "signed"
    side = sidecar_path(path)
    if side.exists():
        try:
            meta = json.loads(side.read_text(encoding="utf-8"))
            ids = [int(i) for i in meta["image_ids"]]
            sign = meta.get("sign", sign)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{side}: malformed sidecar ({exc})") from None
    return decode_saliency_archive(path.read_bytes(), ids, sign, str(path))


# ---------------------------------------------------------------------------
# RAWT datasets


def write_raw_dataset(dataset: Dataset, path: str | Path) -> None:
    n, h, w, c = dataset.pixels.shape
    if not np.array_equal(dataset.ids, np.arange(n)):
        raise ContractError("raw tensor datasets store images with ids 0..n-1")
    header = _pack_header(RAWT_MAGIC, dataset.name, (n, h, w, c))
    body = dataset.labels.astype("<i4").tobytes() + dataset.pixels.astype("<f4").tobytes()
    Path(path).write_bytes(header + body)


def read_raw_dataset(path: str | Path) -> Dataset:
    data = Path(path).read_bytes()
    source = str(path)
    name, (n, h, w, c), offset = _unpack_header(data, RAWT_MAGIC, 4, source)
    expected = offset + 4 * n + 4 * n * h * w * c
    if len(data) != expected:
        raise FormatError(f"{source}: payload length mismatch, expected {expected} bytes, found {len(data)}")
    labels = np.frombuffer(data, dtype="<i4", count=n, offset=offset).astype(np.int64)
    pixels = np.frombuffer(data, dtype="<f4", count=n * h * w * c, offset=offset + 4 * n)
    pixels = pixels.reshape(n, h, w, c).astype(np.float64)
    if not np.all(np.isfinite(pixels)) or pixels.min() < 0 or pixels.max() > 1:
        raise FormatError(f"{source}: pixel values outside [0, 1]")
    return Dataset(pixels, labels, np.arange(n), name=name)


# ---------------------------------------------------------------------------
# score CSV


def write_scores(table: ScoreTable | Iterable[ScoreRow], path: str | Path) -> None:
    rows = table.rows if isinstance(table, ScoreTable) else table
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SCORE_HEADER)
        for r in rows:
            writer.writerow([
                r.image_id,
                "" if r.class_label is None else r.class_label,
                fmt_float(r.confidence),
                r.method_id,
                r.variant,
                fmt_float(r.score),
            ])


def read_scores(path: str | Path) -> ScoreTable:
    table = ScoreTable()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SCORE_HEADER:
            raise FormatError(f"{path}:1: expected header {','.join(SCORE_HEADER)}")
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(SCORE_HEADER):
                raise FormatError(f"{path}:{lineno}: expected {len(SCORE_HEADER)} fields, found {len(rec)}")
            try:
                row = ScoreRow(
                    image_id=int(rec[0]),
                    class_label=None if rec[1] == "" else int(rec[1]),
                    confidence=float(rec[2]),
                    method_id=rec[3],
                    variant=rec[4],
                    score=float(rec[5]),
                )
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: malformed row ({exc})") from None
            if not rec[3] or not rec[4]:
                raise FormatError(f"{path}:{lineno}: empty method or variant")
            try:
                table.add(row)
            except ContractError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    return table


# ---------------------------------------------------------------------------
# JSON documents


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else None
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(doc, path: str | Path) -> None:
    """Deterministic JSON: sorted keys, non-finite floats as null."""
    text = json.dumps(_jsonable(doc), indent=2, sort_keys=True, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def read_json(path: str | Path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from None
