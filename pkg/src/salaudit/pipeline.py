"""End-to-end runs: dataset -> saliency maps -> metric scores -> reliability report.

Output directory layout::

    maps/<method>.salm (+ .ids.json)   saliency archives actually scored
    scores.csv                         one row per (image, method, metric variant)
    aopc_summary.csv                   per-image AOPC at every L
    curves/<method>__<curve>.csv       per-image perturbation curves
    random_orderings.csv               per-ordering AOPC of the random baseline
    report.json                        reliability report
    metadata.json                      resolved config, seeds, statistics, timings
    DONE                               written last; absent means partial output
"""

from __future__ import annotations

import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from . import __version__
from .config import RunConfig
from .dataio import (
    Dataset,
    dataset_mean,
    fmt_float,
    load_cifar10,
    read_raw_dataset,
    read_saliency_archive,
    read_scores,
    write_json,
    write_saliency_archive,
    write_scores,
)
from .errors import ConfigError, ContractError, FormatError, SalauditError
from .model import AffineOracle, Image, Model, forward, load_model_files
from .perturbation import (
    PerturbationSpec,
    aopc_curve,
    faithfulness_from_deltas,
    pixel_ordering,
    random_baseline,
    single_pixel_deltas,
)
from .reliability import MetricVariant, ScoreRow, ScoreTable
from .rng import derive_stream_seed, stream
from .saliency import NATIVE_METHODS, MethodDescriptor, SaliencyMap, native_map
from .synthetic import synthetic_suite

RANDOM_BASELINE = "random-baseline"
ORDER_METRIC = {"morf": "AOPC_MoRF", "lerf": "AOPC_LeRF"}


class StageError(SalauditError):
    def __init__(self, stage: str, cause: SalauditError):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = cause.exit_code


@contextmanager
def _stage(name: str, timings: dict[str, float]) -> Iterator[None]:
    start = time.perf_counter()
    try:
        yield
    except StageError:
        raise
    except SalauditError as exc:
        raise StageError(name, exc) from exc
    except OSError as exc:
        raise StageError(name, ConfigError(f"{exc.strerror or exc}: {exc.filename}")) from exc
    except (ValueError, ArithmeticError) as exc:
        raise StageError(name, ContractError(str(exc))) from exc
    finally:
        timings[name] = timings.get(name, 0.0) + time.perf_counter() - start


@dataclass
class RunContext:
    config: RunConfig
    dataset: Dataset
    model: Model
    mean: np.ndarray
    std: np.ndarray
    pixel_sample: np.ndarray
    methods: list[MethodDescriptor]
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def out(self) -> Path:
        return Path(self.config.out)

    def spec(self, kind: str) -> PerturbationSpec:
        return PerturbationSpec(kind, tuple(self.mean) if kind == "mean" else None)


# ---------------------------------------------------------------------------
# loading


def load_dataset(config: RunConfig) -> tuple[Dataset, Model | None]:
    ds = config.dataset
    if ds.kind == "synthetic":
        dataset, oracle = synthetic_suite(
            config.seed, ds.n_images, ds.height, ds.width, ds.channels, ds.n_classes,
            config.model.link, config.model.weight_scale,
        )
        return dataset, oracle
    if ds.kind == "cifar10":
        dataset = load_cifar10(ds.paths)
    elif ds.kind == "raw":
        dataset = read_raw_dataset(ds.paths[0])
    else:
        raise ConfigError(f"unknown dataset kind {ds.kind!r}")
    if ds.limit is not None:
        n = int(ds.limit)
        dataset = Dataset(dataset.pixels[:n], dataset.labels[:n], dataset.ids[:n], dataset.class_names, dataset.name)
    return dataset, None


def prepare(config: RunConfig, timings: dict[str, float] | None = None) -> RunContext:
    timings = {} if timings is None else timings
    with _stage("load", timings):
        config.validate()
        dataset, model = load_dataset(config)
        if model is None:
            model = load_model_files(config.model.manifest, config.model.weights)
            if config.model.kind == "affine-oracle" and not isinstance(model, AffineOracle):
                raise ConfigError("model manifest does not describe an affine oracle")
        if tuple(model.input_shape) != dataset.image_shape:
            raise ConfigError(f"model input {model.input_shape} does not match images {dataset.image_shape}")
        config.validate(dataset.image_shape)
        mean, std = dataset_mean(dataset)
        h, w, _ = dataset.image_shape
        sample = stream(config.seed, "faithfulness-sample").choice(h * w, size=config.faithfulness_pixels, replace=False)
        methods = [NATIVE_METHODS[m] for m in config.methods]
        seen = set(config.methods)
        for path in config.imports:
            maps = read_saliency_archive(path)
            mid = maps[0].method_id
            if mid in seen or mid == RANDOM_BASELINE:
                raise ConfigError(f"imported method id {mid!r} collides with another method")
            seen.add(mid)
            methods.append(MethodDescriptor(mid, "imported", maps[0].sign))
    return RunContext(config, dataset, model, mean, std, np.asarray(sample, dtype=np.int64), methods, timings)


# ---------------------------------------------------------------------------
# worker pool

_WORKER: dict = {}


def _init_worker(state: dict) -> None:
    _WORKER.clear()
    _WORKER.update(state)


def _call_worker(args):
    fn, indices = args
    return [fn(_WORKER, i) for i in indices]


def _parallel(fn: Callable[[dict, int], object], n: int, state: dict, threads: int) -> list:
    """Apply ``fn(state, i)`` for i in range(n); results come back in index order."""
    if threads <= 1 or n < 2:
        _init_worker(state)
        try:
            return [fn(_WORKER, i) for i in range(n)]
        finally:
            _WORKER.clear()
    block = max(1, n // (threads * 8))
    chunks = [range(s, min(n, s + block)) for s in range(0, n, block)]
    ctx = multiprocessing.get_context("fork")
    with ProcessPoolExecutor(max_workers=threads, mp_context=ctx, initializer=_init_worker, initargs=(state,)) as pool:
        parts = list(pool.map(_call_worker, [(fn, c) for c in chunks]))
    return [r for part in parts for r in part]


def _image(state: dict, i: int) -> Image:
    ds: Dataset = state["dataset"]
    return ds.image(i)


# ---------------------------------------------------------------------------
# saliency stage


def _maps_for_image(state: dict, i: int) -> list[np.ndarray]:
    image = _image(state, i)
    model = state["model"]
    seed = state["seed"]
    out = []
    for mid in state["native"]:
        rng = stream(seed, "random-map", image.id) if mid == "random" else None
        out.append(native_map(mid, model, image, rng=rng, perturbation=state["mean_spec"]).values)
    return out


def compute_maps(ctx: RunContext) -> dict[str, np.ndarray]:
    """N x H x W maps per method, rounded to the float32 precision of SALM archives."""
    cfg = ctx.config
    ids = ctx.dataset.ids
    native = [m.method_id for m in ctx.methods if m.provenance == "native"]
    state = {
        "dataset": ctx.dataset, "model": ctx.model, "seed": cfg.seed,
        "native": native, "mean_spec": ctx.spec("mean"),
    }
    per_image = _parallel(_maps_for_image, len(ctx.dataset), state, cfg.threads)
    maps: dict[str, np.ndarray] = {}
    for k, mid in enumerate(native):
        maps[mid] = np.stack([r[k] for r in per_image]).astype(np.float32).astype(np.float64)
    h, w, _ = ctx.dataset.image_shape
    for path in cfg.imports:
        imported = read_saliency_archive(path)
        by_id = {m.image_id: m for m in imported}
        missing = [int(i) for i in ids if int(i) not in by_id]
        if missing:
            raise FormatError(f"{path}: no map for image ids {missing[:5]}{'...' if len(missing) > 5 else ''}")
        stack = np.stack([by_id[int(i)].values for i in ids])
        if stack.shape[1:] != (h, w):
            raise FormatError(f"{path}: maps are {stack.shape[1:]}, images are {(h, w)}")
        maps[imported[0].method_id] = stack
    return maps


def write_maps(ctx: RunContext, maps: dict[str, np.ndarray]) -> None:
    folder = ctx.out / "maps"
    folder.mkdir(parents=True, exist_ok=True)
    for desc in ctx.methods:
        arr = maps[desc.method_id]
        write_saliency_archive(
            [SaliencyMap(arr[i], desc.method_id, int(ctx.dataset.ids[i]), desc.sign) for i in range(len(arr))],
            folder / f"{desc.method_id}.salm",
        )


def read_maps(ctx: RunContext) -> dict[str, np.ndarray]:
    maps = {}
    for desc in ctx.methods:
        path = ctx.out / "maps" / f"{desc.method_id}.salm"
        loaded = {m.image_id: m.values for m in read_saliency_archive(path)}
        try:
            maps[desc.method_id] = np.stack([loaded[int(i)] for i in ctx.dataset.ids])
        except KeyError as exc:
            raise FormatError(f"{path}: missing map for image {exc.args[0]}") from None
    return maps


# ---------------------------------------------------------------------------
# scoring stage


@dataclass
class ImageScores:
    image_id: int
    label: int | None
    confidence: float
    rows: list[tuple[str, str, float]]
    curves: list[tuple[str, str, np.ndarray]]
    orderings: list[tuple[str, int, np.ndarray]]


def _score_image(state: dict, i: int) -> ImageScores:
    image = _image(state, i)
    model: Model = state["model"]
    cfg: RunConfig = state["config"]
    seed = cfg.seed
    score = forward(model, image)
    cls = score.predicted_class
    rows: list[tuple[str, str, float]] = []
    curves: list[tuple[str, str, np.ndarray]] = []
    orderings: list[tuple[str, int, np.ndarray]] = []
    max_L = cfg.max_L
    for kind in cfg.perturbations:
        spec: PerturbationSpec = state["specs"][kind]
        rgb = kind == "random-rgb"
        f_rng = stream(seed, "faithfulness-rgb", image.id) if rgb else None
        deltas = single_pixel_deltas(model, image, state["sample"], spec, f_rng, cls)
        for mid in state["methods"]:
            smap = SaliencyMap(state["maps"][mid][i], mid, image.id)
            f = faithfulness_from_deltas(smap, state["sample"], deltas)
            rows.append((mid, str(MetricVariant("F", kind)), f.score))
            for order in cfg.orders:
                a_rng = stream(seed, f"aopc-rgb/{mid}/{order}", image.id) if rgb else None
                res = aopc_curve(model, image, pixel_ordering(smap, order), max_L, spec, a_rng, cls, cfg.L)
                metric = ORDER_METRIC[order]
                for L in cfg.L:
                    rows.append((mid, str(MetricVariant(metric, kind, L)), res.aopc[L]))
                curves.append((mid, f"{metric}_{kind}", res.curve))
        if cfg.random_orderings > 0:
            rb = random_baseline(model, image, cfg.random_orderings, max_L, spec, seed, cls)
            for L in cfg.L:
                per_ordering = rb.aopc(L)
                orderings.append((kind, L, per_ordering))
                for order in cfg.orders:
                    rows.append((RANDOM_BASELINE, str(MetricVariant(ORDER_METRIC[order], kind, L)), float(per_ordering.mean())))
            curves.append((RANDOM_BASELINE, f"AOPC_random_{kind}", rb.mean_curve()))
    return ImageScores(image.id, image.label, score.confidence, rows, curves, orderings)


def compute_scores(ctx: RunContext, maps: dict[str, np.ndarray]) -> list[ImageScores]:
    cfg = ctx.config
    state = {
        "dataset": ctx.dataset, "model": ctx.model, "config": cfg,
        "specs": {k: ctx.spec(k) for k in cfg.perturbations},
        "sample": ctx.pixel_sample,
        "methods": [m.method_id for m in ctx.methods],
        "maps": maps,
    }
    return _parallel(_score_image, len(ctx.dataset), state, cfg.threads)


def score_table(results: list[ImageScores]) -> ScoreTable:
    table = ScoreTable()
    for r in results:
        for mid, variant, value in r.rows:
            table.add(ScoreRow(r.image_id, r.label, r.confidence, mid, variant, value))
    return table


def write_score_outputs(ctx: RunContext, results: list[ImageScores]) -> None:
    out = ctx.out
    out.mkdir(parents=True, exist_ok=True)
    write_scores(score_table(results), out / "scores.csv")

    lines = ["image_id,method,order_mode,perturbation,L,aopc"]
    for r in results:
        for mid, variant, value in r.rows:
            v = MetricVariant.parse(variant)
            if v.metric == "F":
                continue
            mode = "random" if mid == RANDOM_BASELINE else ("morf" if v.metric == "AOPC_MoRF" else "lerf")
            if mid == RANDOM_BASELINE and v.metric != ORDER_METRIC[ctx.config.orders[0]]:
                continue
            lines.append(f"{r.image_id},{mid},{mode},{v.perturbation},{v.L},{fmt_float(value)}")
    (out / "aopc_summary.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    lines = ["image_id,perturbation,L,ordering,aopc"]
    for r in results:
        for kind, L, values in r.orderings:
            lines.extend(f"{r.image_id},{kind},{L},{j},{fmt_float(v)}" for j, v in enumerate(values))
    (out / "random_orderings.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    if ctx.config.write_curves:
        folder = out / "curves"
        folder.mkdir(exist_ok=True)
        files: dict[tuple[str, str], list[str]] = {}
        for r in results:
            for mid, name, curve in r.curves:
                buf = files.setdefault((mid, name), ["image_id,k,drop"])
                buf.extend(f"{r.image_id},{k},{fmt_float(d)}" for k, d in enumerate(curve))
        for (mid, name), buf in files.items():
            (folder / f"{mid}__{name}.csv").write_text("\n".join(buf) + "\n", encoding="utf-8")


def read_random_orderings(path: Path) -> dict[tuple[str, int], dict[int, np.ndarray]]:
    """{(perturbation, L): {image_id: per-ordering AOPC}} from ``random_orderings.csv``."""
    import csv

    out: dict[tuple[str, int], dict[int, list[float]]] = {}
    if not path.exists():
        return {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["image_id", "perturbation", "L", "ordering", "aopc"]:
            raise FormatError(f"{path}:1: unexpected header")
        for lineno, rec in enumerate(reader, start=2):
            try:
                image_id, kind, L, j, value = int(rec[0]), rec[1], int(rec[2]), int(rec[3]), float(rec[4])
            except (ValueError, IndexError) as exc:
                raise FormatError(f"{path}:{lineno}: malformed row ({exc})") from None
            per_image = out.setdefault((kind, L), {}).setdefault(image_id, [])
            if j != len(per_image):
                raise FormatError(f"{path}:{lineno}: ordering index {j} out of sequence")
            per_image.append(value)
    return {k: {i: np.asarray(v) for i, v in d.items()} for k, d in out.items()}


# ---------------------------------------------------------------------------
# stages


def _metadata(ctx: RunContext, stage_report: dict | None = None) -> dict:
    cfg = ctx.config
    h, w, c = ctx.dataset.image_shape
    return {
        "tool": {"name": "salaudit", "version": __version__},
        "config": cfg.to_dict(),
        "seeds": {
            "master": cfg.seed,
            "faithfulness-sample": derive_stream_seed(cfg.seed, "faithfulness-sample"),
            "stream-scheme": "blake2b(master, tag, indices) -> PCG64",
        },
        "dataset": {
            "name": ctx.dataset.name, "n_images": len(ctx.dataset), "shape": [h, w, c],
            "mean": ctx.mean, "std": ctx.std,
        },
        "model": {"kind": ctx.model.kind, "classes": ctx.model.n_classes,
                  "standardization": {"mean": ctx.model.mean, "std": ctx.model.std}},
        "perturbations": {k: {"kind": k, "mean": list(ctx.spec(k).mean) if k == "mean" else None}
                          for k in cfg.perturbations},
        "methods": [{"id": m.method_id, "provenance": m.provenance, "sign": m.sign} for m in ctx.methods],
        "L_grid": cfg.L,
        "faithfulness_pixel_sample": ctx.pixel_sample,
        "conventions": {
            "gradient_target": "pre-softmax logit",
            "gradient_x_input_channel_reduction": "sum",
            "saliency_class": "predicted",
            "lerf_order": "ascending signed relevance",
        },
        "timings_seconds": dict(ctx.timings),
        **({"report": stage_report} if stage_report else {}),
    }


def run_saliency(config: RunConfig, ctx: RunContext | None = None) -> tuple[RunContext, dict[str, np.ndarray]]:
    ctx = ctx or prepare(config)
    with _stage("maps", ctx.timings):
        maps = compute_maps(ctx)
        write_maps(ctx, maps)
    return ctx, maps


def run_scoring(config: RunConfig, ctx: RunContext | None = None, maps=None) -> RunContext:
    ctx = ctx or prepare(config)
    with _stage("scores", ctx.timings):
        if maps is None:
            maps = read_maps(ctx)
        results = compute_scores(ctx, maps)
        write_score_outputs(ctx, results)
    return ctx


def run_reliability(config: RunConfig, timings: dict[str, float] | None = None) -> dict:
    """Build ``report.json`` from the score files on disk."""
    from .report import build_report

    timings = {} if timings is None else timings
    out = Path(config.out)
    with _stage("reliability", timings):
        table = read_scores(out / "scores.csv")
        orderings = read_random_orderings(out / "random_orderings.csv")
        report = build_report(table, orderings, config)
    with _stage("report", timings):
        write_json(report, out / "report.json")
    return report


def run_pipeline(config: RunConfig) -> dict:
    out = Path(config.out)
    timings: dict[str, float] = {}
    ctx = prepare(config, timings)
    out.mkdir(parents=True, exist_ok=True)
    (out / "DONE").unlink(missing_ok=True)
    ctx, maps = run_saliency(config, ctx)
    run_scoring(config, ctx, maps)
    report = run_reliability(config, timings)
    write_json(_metadata(ctx, {"n_images": report["settings"]["n_images"]}), out / "metadata.json")
    (out / "DONE").write_text("ok\n", encoding="utf-8")
    return report
