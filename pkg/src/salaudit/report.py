"""Reliability report assembly and plain-text rendering."""

from __future__ import annotations

import math
from typing import Mapping

import numpy as np

from .config import RunConfig
from .errors import ContractError
from .reliability import (
    ALPHA_UNRELIABLE_BELOW,
    HIGHER_BETTER,
    MetricVariant,
    ScoreTable,
    aggregate,
    bootstrap_distribution,
    inter_method_matrix,
    internal_consistency,
    krippendorff_alpha,
    percentile_interval,
    ranking_matrix,
)
from .rng import stream

RANDOM_BASELINE = "random-baseline"
REPORT_VERSION = 1

# Column order of the alpha quadrant: (perturbation, baseline included).
TABLE1_COLUMNS = (("mean", True), ("random-rgb", True), ("mean", False), ("random-rgb", False))


def _cov_key(c: float) -> str:
    return f"{c:g}"


def _finite(x: float) -> float | None:
    return float(x) if math.isfinite(x) else None


def filter_table(table: ScoreTable, config: RunConfig) -> ScoreTable:
    """Apply the class and confidence filters of ``config``."""
    classes = None if config.classes is None else set(config.classes)
    lo, hi = config.min_confidence, config.max_confidence

    def keep(row) -> bool:
        if classes is not None and row.class_label not in classes:
            return False
        if lo is not None and row.confidence < lo:
            return False
        return not (hi is not None and row.confidence > hi)

    if classes is None and lo is None and hi is None:
        return table
    return table.select(keep)


def ordered_variants(table: ScoreTable) -> list[MetricVariant]:
    order = {"F": 0, "AOPC_MoRF": 1, "AOPC_LeRF": 2}
    pert = {"mean": 0, "random-rgb": 1}
    vs = [MetricVariant.parse(v) for v in table.variants()]
    return sorted(vs, key=lambda v: (order[v.metric], v.L or 0, pert.get(v.perturbation, 9), v.perturbation))


def rated_methods(table: ScoreTable, config: RunConfig, variant: str) -> list[str]:
    """Methods entering alpha and rho for ``variant`` (random baseline only when asked)."""
    ids = [m for m in table.methods() if m != RANDOM_BASELINE]
    if config.include_random_baseline and RANDOM_BASELINE in table.methods() and not variant.startswith("F:"):
        ids.append(RANDOM_BASELINE)
    return ids


def _alpha_entry(table, variant: str, methods: list[str], with_baseline: bool, config: RunConfig) -> dict:
    v = MetricVariant.parse(variant)
    ids, scores = table.matrix(variant, methods)
    entry = {
        "variant": variant, "metric": v.metric, "perturbation": v.perturbation, "L": v.L,
        "with_baseline": with_baseline, "methods": methods, "level": config.krippendorff_level,
        "n_images": len(ids), "value": None, "degenerate": True,
        "ci_low": {}, "ci_high": {}, "unreliable": None,
    }
    if len(methods) < 2 or len(ids) < 2:
        return entry
    ranks = ranking_matrix(scores, v.direction)
    alpha = krippendorff_alpha(ranks, config.krippendorff_level)
    entry["value"] = _finite(alpha)
    entry["degenerate"] = not math.isfinite(alpha)
    if math.isfinite(alpha):
        entry["unreliable"] = alpha < ALPHA_UNRELIABLE_BELOW
    tag = f"bootstrap-alpha/{variant}/{'with' if with_baseline else 'without'}"
    dist = bootstrap_distribution(ranks, "alpha", config.bootstrap_resamples, stream(config.seed, tag),
                                  config.krippendorff_level)
    for cov in config.coverages:
        if np.all(np.isnan(dist)):
            lo = hi = math.nan
        else:
            lo, hi = percentile_interval(dist, cov)
        entry["ci_low"][_cov_key(cov)] = _finite(lo)
        entry["ci_high"][_cov_key(cov)] = _finite(hi)
    return entry


def _without(methods: list[str], baseline: str) -> list[str]:
    return [m for m in methods if m != baseline]


def _inter_entry(table, variant: str, methods: list[str], with_baseline: bool) -> dict:
    entry = {"variant": variant, "with_baseline": with_baseline, "methods": methods,
             "matrix": None, "mean_pairwise": None, "n_degenerate": 0, "n_images": 0}
    ids, _ = table.matrix(variant, methods)
    if len(methods) < 2 or len(ids) < 2:
        return entry
    res = inter_method_matrix(table, variant, methods)
    entry.update(matrix=res.matrix.tolist(), mean_pairwise=res.mean_pairwise,
                 n_degenerate=res.n_degenerate, n_images=res.n_images)
    return entry


def _consistency_pairs(variants: list[MetricVariant]) -> list[tuple[str, str]]:
    have = {str(v) for v in variants}
    perts = list(dict.fromkeys(v.perturbation for v in variants))
    Ls = [v.L for v in variants if v.L is not None]
    if not Ls:
        return []
    top = max(Ls)
    pairs = []
    for p in perts:
        f = f"F:{p}"
        morf = f"AOPC_MoRF:{p}:L={top}"
        lerf = f"AOPC_LeRF:{p}:L={top}"
        pairs += [(f, morf), (f, lerf), (morf, lerf)]
    if "mean" in perts and "random-rgb" in perts:
        pairs.append((f"AOPC_MoRF:random-rgb:L={top}", f"AOPC_MoRF:mean:L={top}"))
    return [(a, b) for a, b in pairs if a in have and b in have]


def _consistency(table: ScoreTable, variants: list[MetricVariant], config: RunConfig) -> list[dict]:
    out = []
    methods = [m for m in table.methods() if m != RANDOM_BASELINE or config.include_random_baseline]
    for a, b in _consistency_pairs(variants):
        for method in methods:
            ids_a, _ = table.matrix(a, [method])
            ids_b, _ = table.matrix(b, [method])
            n = len(set(ids_a) & set(ids_b))
            if n < 2:
                continue
            c = internal_consistency(table, a, b, method)
            out.append({"method": method, "variant_pair": [a, b], "rho": c.value,
                        "degenerate": c.degenerate, "n_images": n})
    return out


def _aggregates(table: ScoreTable, variants: list[MetricVariant], config: RunConfig) -> list[dict]:
    out = []
    for v in variants:
        methods = [m for m in table.methods() if table.matrix(str(v), [m])[0]]
        if not methods:
            continue
        columns = [table.matrix(str(v), [m])[1][:, 0] for m in methods]
        complete_ids, complete = table.matrix(str(v), methods)
        ci: dict[str, np.ndarray] = {}
        if len(complete_ids) >= 2:
            dist = bootstrap_distribution(complete, "mean", config.bootstrap_resamples,
                                          stream(config.seed, f"bootstrap-mean/{v}"))
            lo, hi = percentile_interval(dist, 0.95)
            ci = {"low": np.atleast_1d(lo), "high": np.atleast_1d(hi)}
        for k, (m, col) in enumerate(zip(methods, columns)):
            s = aggregate(col).as_dict()
            s.update(method=m, variant=str(v))
            if ci:
                s["mean_ci95"] = [float(ci["low"][k]), float(ci["high"][k])]
            out.append(s)
    return out


def _rankings(table: ScoreTable, variants: list[MetricVariant], config: RunConfig) -> dict:
    out: dict[str, dict] = {}
    for v in variants:
        methods = table.methods()
        present = [m for m in methods if table.matrix(str(v), [m])[0]]
        means = {m: float(table.matrix(str(v), [m])[1].mean()) for m in present}
        sign = -1.0 if v.direction == HIGHER_BETTER else 1.0
        order = sorted(present, key=lambda m: (sign * means[m], m))
        rated = [m for m in rated_methods(table, config, str(v)) if m in present]
        mean_rank = {}
        if len(rated) >= 2:
            _, rs = table.matrix(str(v), rated)
            if len(rs):
                ranks = ranking_matrix(rs, v.direction)
                mean_rank = {m: float(ranks[:, k].mean()) for k, m in enumerate(rated)}
        out.setdefault(v.perturbation, {})[str(v)] = {
            "direction": v.direction, "order": order, "mean_score": means, "mean_rank": mean_rank,
        }
    return out


def _random_band(orderings: Mapping, table: ScoreTable) -> list[dict]:
    keep = set(table.image_ids())
    out = []
    for (kind, L) in sorted(orderings, key=lambda k: (k[0], k[1])):
        per_image = {i: v for i, v in orderings[(kind, L)].items() if i in keep}
        if not per_image:
            continue
        pooled = np.concatenate([per_image[i] for i in sorted(per_image)])
        means = np.array([per_image[i].mean() for i in sorted(per_image)])
        lo, hi = np.quantile(pooled, [0.025, 0.975])
        out.append({"perturbation": kind, "L": L, "n_images": len(per_image),
                    "orderings_per_image": int(pooled.size // len(per_image)),
                    "mean": float(means.mean()), "band95": [float(lo), float(hi)]})
    return out


def _per_class(table: ScoreTable, variants: list[MetricVariant], config: RunConfig) -> list[dict]:
    labels = sorted({table.image_info(i)[0] for i in table.image_ids()}, key=lambda c: (c is None, c))
    out = []
    for c in labels:
        sub = table.select(lambda r, c=c: r.class_label == c)
        entry = {"class_label": c, "n_images": len(sub.image_ids()), "alpha": [], "mean_pairwise": [], "means": []}
        for v in variants:
            methods = rated_methods(sub, config, str(v))
            for with_b, ms in ((True, methods), (False, _without(methods, config.baseline_method))):
                ids, scores = sub.matrix(str(v), ms)
                value = None
                if len(ms) >= 2 and len(ids) >= 2:
                    value = _finite(krippendorff_alpha(ranking_matrix(scores, v.direction), config.krippendorff_level))
                entry["alpha"].append({"variant": str(v), "with_baseline": with_b, "value": value})
            ids, _ = sub.matrix(str(v), methods)
            rho = None
            if len(methods) >= 2 and len(ids) >= 2:
                rho = inter_method_matrix(sub, str(v), methods).mean_pairwise
            entry["mean_pairwise"].append({"variant": str(v), "with_baseline": True, "value": rho})
            for m in sub.methods():
                _, col = sub.matrix(str(v), [m])
                if len(col):
                    entry["means"].append({"method": m, "variant": str(v), "mean": float(col.mean())})
        out.append(entry)
    return out


def build_report(table: ScoreTable, orderings: Mapping, config: RunConfig) -> dict:
    """Reliability report over the scores that survive the configured filters."""
    n_all = len(table.image_ids())
    table = filter_table(table, config)
    if len(table) == 0:
        raise ContractError("no scored images remain after the class/confidence filters")
    variants = ordered_variants(table)
    alpha, inter = [], []
    for v in variants:
        methods = rated_methods(table, config, str(v))
        for with_b, ms in ((True, methods), (False, _without(methods, config.baseline_method))):
            alpha.append(_alpha_entry(table, str(v), ms, with_b, config))
            inter.append(_inter_entry(table, str(v), ms, with_b))

    by_key = {(a["variant"], a["with_baseline"]): a for a in alpha}
    rows = []
    for metric, L in dict.fromkeys((v.metric, v.L) for v in variants):
        cells = []
        for pert, with_b in TABLE1_COLUMNS:
            key = str(MetricVariant(metric, pert, L))
            a = by_key.get((key, with_b))
            cells.append(None if a is None else {
                "value": a["value"], "ci_low": a["ci_low"], "ci_high": a["ci_high"], "n_images": a["n_images"]})
        rows.append({"metric": metric, "L": L, "cells": cells})
    table1 = {
        "columns": [{"perturbation": p, "with_baseline": w} for p, w in TABLE1_COLUMNS],
        "baseline_method": config.baseline_method,
        "rows": rows,
    }

    return {
        "version": REPORT_VERSION,
        "settings": {
            "n_images": len(table.image_ids()),
            "n_images_before_filters": n_all,
            "filters": {"classes": config.classes, "min_confidence": config.min_confidence,
                        "max_confidence": config.max_confidence},
            "methods": table.methods(),
            "baseline_method": config.baseline_method,
            "random_baseline_in_statistics": bool(config.include_random_baseline),
            "krippendorff_level": config.krippendorff_level,
            "bootstrap": {"resamples": config.bootstrap_resamples, "coverages": config.coverages,
                          "unit": "image rows", "method": "percentile"},
            "alpha_unreliable_below": ALPHA_UNRELIABLE_BELOW,
            "gradient_target": "pre-softmax logit",
            "gradient_x_input_channel_reduction": "sum",
            "lerf_order": "ascending signed relevance",
            "degenerate_faithfulness": "included",
            "seed": config.seed,
        },
        "alpha": alpha,
        "table1": table1,
        "inter_method": inter,
        "internal_consistency": _consistency(table, variants, config),
        "aggregates": _aggregates(table, variants, config),
        "method_ranking": _rankings(table, variants, config),
        "random_baseline": _random_band(orderings, table),
        "per_class": _per_class(table, variants, config),
    }


# ---------------------------------------------------------------------------
# text rendering


def _fmt(x) -> str:
    return "  n/a" if x is None else f"{x:5.2f}"


def render_report(report: Mapping, coverage: str | None = None) -> str:
    s = report["settings"]
    covs = [_cov_key(c) for c in s["bootstrap"]["coverages"]]
    cov = coverage or (covs[-1] if covs else None)
    lines = [
        f"images: {s['n_images']} (of {s['n_images_before_filters']})   methods: {', '.join(s['methods'])}",
        f"alpha level: {s['krippendorff_level']}   CI coverage shown: {cov}   baseline: {s['baseline_method']}",
        "",
    ]
    t = report["table1"]
    heads = [f"{c['perturbation']}/{'with' if c['with_baseline'] else 'without'}" for c in t["columns"]]
    lines.append(f"{'Krippendorff alpha':<22}" + "".join(f"{h:>26}" for h in heads))
    for row in t["rows"]:
        label = row["metric"] + ("" if row["L"] is None else f" L={row['L']}")
        cells = []
        for cell in row["cells"]:
            if cell is None:
                cells.append(f"{'-':>26}")
                continue
            lo = cell["ci_low"].get(cov) if cov else None
            hi = cell["ci_high"].get(cov) if cov else None
            cells.append(f"{_fmt(cell['value'])} ({_fmt(lo)} - {_fmt(hi)})".rjust(26))
        lines.append(f"{label:<22}" + "".join(cells))
    lines += ["", "mean pairwise Spearman (with / without baseline)"]
    inter = {(e["variant"], e["with_baseline"]): e["mean_pairwise"] for e in report["inter_method"]}
    for variant in dict.fromkeys(e["variant"] for e in report["inter_method"]):
        lines.append(f"  {variant:<28}{_fmt(inter.get((variant, True)))}  {_fmt(inter.get((variant, False)))}")
    if report["internal_consistency"]:
        lines += ["", "internal consistency (Spearman)"]
        for e in report["internal_consistency"]:
            a, b = e["variant_pair"]
            lines.append(f"  {e['method']:<20}{a} vs {b}: {_fmt(e['rho'])}")
    lines += ["", "method ranking by mean score (best first)"]
    for pert, block in report["method_ranking"].items():
        for variant, r in block.items():
            lines.append(f"  {variant:<28}{' > '.join(r['order'])}")
    return "\n".join(lines) + "\n"
