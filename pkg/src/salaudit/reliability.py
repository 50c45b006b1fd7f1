"""Reliability statistics for saliency-metric scores.

Images act as raters and saliency methods as the rated units. The three
checks are inter-rater agreement (Krippendorff's alpha on per-image method
rankings), inter-method agreement (pairwise Spearman over images) and
internal consistency (Spearman between two metric variants for one method).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import ContractError

HIGHER_BETTER = "higher-better"
LOWER_BETTER = "lower-better"
METRICS = ("F", "AOPC_MoRF", "AOPC_LeRF")
LEVELS = ("ordinal", "interval")

# Conventional cut-off below which alpha signals unreliable agreement.
ALPHA_UNRELIABLE_BELOW = 0.65

HISTOGRAM_BINS = 64


class Correlation(NamedTuple):
    value: float
    degenerate: bool


def pearson(x, y) -> Correlation:
    """Pearson r; zero-variance input gives ``Correlation(0.0, True)``."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise ContractError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise ContractError("correlation needs at least 2 observations")
    if np.all(x == x[0]) or np.all(y == y[0]):
        return Correlation(0.0, True)
    dx = x - x.mean()
    dy = y - y.mean()
    r = float(np.dot(dx, dy) / math.sqrt(float(np.dot(dx, dx)) * float(np.dot(dy, dy))))
    return Correlation(min(1.0, max(-1.0, r)), False)


def fractional_ranks(x) -> np.ndarray:
    """Ascending ranks starting at 1; ties share their average rank."""
    return rankdata(np.asarray(x, dtype=np.float64), method="average")


def spearman(x, y) -> Correlation:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.size != y.size:
        raise ContractError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise ContractError("spearman needs at least 2 observations")
    return pearson(fractional_ranks(x), fractional_ranks(y))


# ---------------------------------------------------------------------------
# metric variants and score tables


@dataclass(frozen=True)
class MetricVariant:
    metric: str
    perturbation: str
    L: int | None = None

    _PATTERN = re.compile(r"^(F|AOPC_MoRF|AOPC_LeRF):([a-z-]+)(?::L=(\d+))?$")

    def __post_init__(self) -> None:
        if self.metric not in METRICS:
            raise ContractError(f"unknown metric {self.metric!r}")
        if (self.metric == "F") != (self.L is None):
            raise ContractError(f"{self.metric} variant must {'not ' if self.metric == 'F' else ''}carry L")

    @property
    def direction(self) -> str:
        return LOWER_BETTER if self.metric == "AOPC_LeRF" else HIGHER_BETTER

    def __str__(self) -> str:
        base = f"{self.metric}:{self.perturbation}"
        return base if self.L is None else f"{base}:L={self.L}"

    @classmethod
    def parse(cls, text: str) -> "MetricVariant":
        m = cls._PATTERN.match(text)
        if not m:
            raise ContractError(f"malformed metric variant {text!r}")
        return cls(m.group(1), m.group(2), None if m.group(3) is None else int(m.group(3)))


@dataclass(frozen=True)
class ScoreRow:
    image_id: int
    class_label: int | None
    confidence: float
    method_id: str
    variant: str
    score: float


class ScoreTable:
    """Scores keyed by (image-id, method-id, metric-variant)."""

    def __init__(self, rows: Iterable[ScoreRow] = ()):
        self.rows: list[ScoreRow] = []
        self._scores: dict[tuple[int, str, str], float] = {}
        self._images: dict[int, tuple[int | None, float]] = {}
        for row in rows:
            self.add(row)

    def add(self, row: ScoreRow) -> None:
        key = (row.image_id, row.method_id, row.variant)
        if key in self._scores:
            raise ContractError(f"duplicate score for image {row.image_id}, {row.method_id}, {row.variant}")
        self._scores[key] = row.score
        self._images.setdefault(row.image_id, (row.class_label, row.confidence))
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    def __eq__(self, other) -> bool:
        return isinstance(other, ScoreTable) and self.rows == other.rows

    def methods(self) -> list[str]:
        return list(dict.fromkeys(r.method_id for r in self.rows))

    def variants(self) -> list[str]:
        return list(dict.fromkeys(r.variant for r in self.rows))

    def image_ids(self) -> list[int]:
        return sorted(self._images)

    def image_info(self, image_id: int) -> tuple[int | None, float]:
        return self._images[image_id]

    def score(self, image_id: int, method_id: str, variant: str) -> float:
        return self._scores[(image_id, method_id, str(variant))]

    def matrix(self, variant, methods: Sequence[str]) -> tuple[list[int], np.ndarray]:
        """Images x methods scores over images that have every requested method."""
        variant = str(variant)
        ids = [
            i for i in self.image_ids()
            if all((i, m, variant) in self._scores for m in methods)
        ]
        mat = np.array([[self._scores[(i, m, variant)] for m in methods] for i in ids], dtype=np.float64)
        return ids, mat.reshape(len(ids), len(methods))

    def select(self, keep: Callable[[ScoreRow], bool]) -> "ScoreTable":
        return ScoreTable(r for r in self.rows if keep(r))


# ---------------------------------------------------------------------------
# rankings and Krippendorff's alpha


def rank_methods(scores, direction: str = HIGHER_BETTER) -> np.ndarray:
    """Rank 1 = best; tied scores share their average rank."""
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size < 2:
        raise ContractError("ranking needs a vector of at least 2 method scores")
    if not np.all(np.isfinite(s)):
        raise ContractError("cannot rank non-finite scores")
    if direction == HIGHER_BETTER:
        return rankdata(-s, method="average")
    if direction == LOWER_BETTER:
        return rankdata(s, method="average")
    raise ContractError(f"unknown direction {direction!r}")


def ranking_matrix(scores: np.ndarray, direction: str) -> np.ndarray:
    """Row-wise :func:`rank_methods` over an images x methods score matrix."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[1] < 2:
        raise ContractError("ranking matrix needs at least 2 method columns")
    if not np.all(np.isfinite(scores)):
        raise ContractError("cannot rank non-finite scores")
    signed = -scores if direction == HIGHER_BETTER else scores
    return rankdata(signed, method="average", axis=1)


def _one_hot(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    values, inverse = np.unique(matrix, return_inverse=True)
    inverse = inverse.reshape(matrix.shape)
    onehot = (inverse[..., None] == np.arange(values.size)).astype(np.float64)
    return values, onehot  # rows x units x values


def _alpha_from_counts(counts: np.ndarray, values: np.ndarray, level: str) -> np.ndarray:
    """Alpha for a batch of per-unit value counts (B x units x values).

    Uses the coincidence-matrix form: alpha = 1 - (n - 1) * sum_ck o_ck d_ck
    / sum_ck n_c n_k d_ck, where o_ck sums n_uc n_uk / (m_u - 1) over units.
    The diagonal of d is zero, so self-pairs never contribute.
    """
    counts = np.asarray(counts, dtype=np.float64)
    m_u = counts.sum(axis=2)
    n_c = counts.sum(axis=1)
    n = n_c.sum(axis=1)
    if level == "interval":
        diff = values[:, None] - values[None, :]
        delta = np.broadcast_to(diff * diff, (counts.shape[0],) + diff.shape)
    elif level == "ordinal":
        cum = np.cumsum(n_c, axis=1)
        d = cum[:, None, :] - cum[:, :, None] + (n_c[:, :, None] - n_c[:, None, :]) / 2.0
        delta = d * d
    else:
        raise ContractError(f"unknown level {level!r}; expected one of {LEVELS}")
    pairable = m_u > 1
    unit_weight = np.where(pairable, 1.0 / np.where(pairable, m_u - 1.0, 1.0), 0.0)
    within = np.einsum("bmc,bck,bmk->bm", counts, delta, counts)
    observed = np.sum(within * unit_weight, axis=1)
    expected = np.einsum("bc,bck,bk->b", n_c, delta, n_c)
    with np.errstate(divide="ignore", invalid="ignore"):
        alpha = 1.0 - (n - 1.0) * observed / expected
    return np.where(expected > 0, alpha, np.nan)


def krippendorff_alpha(matrix, level: str = "ordinal") -> float:
    """Alpha for a complete raters x units matrix; NaN when undefined.

    Rows are raters (images), columns are units (methods) and cells are the
    values being compared (ranks). Undefined means fewer than two distinct
    values in the whole matrix.
    """
    mat = np.asarray(matrix, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] < 2 or mat.shape[1] < 2:
        raise ContractError(f"alpha needs at least 2 rows and 2 columns, got shape {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise ContractError("alpha needs a complete matrix of finite values")
    if level not in LEVELS:
        raise ContractError(f"unknown level {level!r}; expected one of {LEVELS}")
    values, onehot = _one_hot(mat)
    if values.size < 2:
        return math.nan
    return float(_alpha_from_counts(onehot.sum(axis=0)[None], values, level)[0])


# ---------------------------------------------------------------------------
# correlation checks


@dataclass
class InterMethodResult:
    variant: str
    methods: list[str]
    matrix: np.ndarray
    mean_pairwise: float
    n_degenerate: int
    n_images: int


def inter_method_matrix(table: ScoreTable, variant, methods: Sequence[str]) -> InterMethodResult:
    methods = list(methods)
    if len(methods) < 2:
        raise ContractError("inter-method reliability needs at least 2 methods")
    ids, scores = table.matrix(variant, methods)
    m = len(methods)
    rho = np.eye(m)
    upper = []
    degenerate = 0
    for a in range(m):
        for b in range(a + 1, m):
            c = spearman(scores[:, a], scores[:, b])
            rho[a, b] = rho[b, a] = c.value
            upper.append(c.value)
            degenerate += c.degenerate
    return InterMethodResult(str(variant), methods, rho, float(np.mean(upper)), degenerate, len(ids))


def internal_consistency(table: ScoreTable, variant_a, variant_b, method: str) -> Correlation:
    ids_a, a = table.matrix(variant_a, [method])
    ids_b, b = table.matrix(variant_b, [method])
    common = sorted(set(ids_a) & set(ids_b))
    pos_a = {i: k for k, i in enumerate(ids_a)}
    pos_b = {i: k for k, i in enumerate(ids_b)}
    x = [a[pos_a[i], 0] for i in common]
    y = [b[pos_b[i], 0] for i in common]
    return spearman(x, y)


# ---------------------------------------------------------------------------
# bootstrap


def _resample_counts(n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """size x n multiplicities of each row under resampling with replacement."""
    idx = rng.integers(0, n, size=(size, n))
    flat = idx + (np.arange(size) * n)[:, None]
    return np.bincount(flat.ravel(), minlength=size * n).reshape(size, n).astype(np.float64)


def bootstrap_distribution(
    samples,
    statistic: str | Callable[[np.ndarray], float] = "mean",
    n_resamples: int = 10_000,
    rng: np.random.Generator | None = None,
    level: str = "ordinal",
) -> np.ndarray:
    """Statistic recomputed on ``n_resamples`` row resamples of ``samples``.

    ``statistic`` is ``"mean"`` (column means for 2-D input), ``"alpha"``
    (Krippendorff's alpha of a raters x units matrix, rows resampled whole)
    or a callable applied to each resampled array.
    """
    data = np.asarray(samples, dtype=np.float64)
    if data.size == 0 or data.shape[0] == 0:
        raise ContractError("bootstrap needs a non-empty sample")
    if data.shape[0] < 2:
        raise ContractError("bootstrap needs at least 2 samples")
    if n_resamples < 1:
        raise ContractError("bootstrap needs at least one resample")
    if rng is None:
        raise ContractError("bootstrap needs a seeded generator")
    n = data.shape[0]
    chunk = max(1, 2_000_000 // n)
    out = []
    if statistic == "mean":
        anchor = data[0]
        centred = data - anchor
        lo, hi = data.min(axis=0), data.max(axis=0)
        for start in range(0, n_resamples, chunk):
            counts = _resample_counts(n, min(chunk, n_resamples - start), rng)
            out.append(np.clip(anchor + counts @ centred / n, lo, hi))
    elif statistic == "alpha":
        if data.ndim != 2 or data.shape[1] < 2:
            raise ContractError("alpha bootstrap needs a raters x units matrix")
        values, onehot = _one_hot(data)
        flat = onehot.reshape(n, -1)
        for start in range(0, n_resamples, chunk):
            counts = _resample_counts(n, min(chunk, n_resamples - start), rng)
            per_unit = (counts @ flat).reshape(counts.shape[0], data.shape[1], values.size)
            out.append(_alpha_from_counts(per_unit, values, level))
    elif callable(statistic):
        for _ in range(n_resamples):
            out.append(np.atleast_1d(statistic(data[rng.integers(0, n, size=n)])))
        return np.squeeze(np.stack(out))
    else:
        raise ContractError(f"unknown bootstrap statistic {statistic!r}")
    return np.concatenate(out, axis=0)


def percentile_interval(distribution: np.ndarray, coverage: float) -> tuple:
    if not 0.0 < coverage < 1.0:
        raise ContractError(f"coverage must lie in (0, 1), got {coverage}")
    tail = (1.0 - coverage) / 2.0
    lo, hi = np.nanquantile(distribution, [tail, 1.0 - tail], axis=0)
    if np.ndim(lo) == 0:
        return float(lo), float(hi)
    return lo, hi


def bootstrap_ci(
    samples,
    statistic: str | Callable[[np.ndarray], float] = "mean",
    n_resamples: int = 10_000,
    coverage: float = 0.95,
    rng: np.random.Generator | None = None,
    level: str = "ordinal",
) -> tuple:
    """Percentile bootstrap interval ``(low, high)`` at ``coverage``."""
    if not 0.0 < coverage < 1.0:
        raise ContractError(f"coverage must lie in (0, 1), got {coverage}")
    dist = bootstrap_distribution(samples, statistic, n_resamples, rng, level)
    return percentile_interval(dist, coverage)


# ---------------------------------------------------------------------------
# distribution summaries


@dataclass
class Summary:
    n: int
    mean: float
    median: float
    q1: float
    q3: float
    std: float
    histogram: list[int]
    bin_edges: tuple[float, float]

    def as_dict(self) -> dict:
        return {
            "n": self.n, "mean": self.mean, "median": self.median, "q1": self.q1,
            "q3": self.q3, "std": self.std,
            "histogram": {"bins": len(self.histogram), "range": list(self.bin_edges), "counts": self.histogram},
        }


def aggregate(scores) -> Summary:
    """Mean, median, linear-interpolation quartiles, population std, 64-bin histogram."""
    x = np.asarray(scores, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise ContractError("cannot summarize an empty score vector")
    q1, med, q3 = np.quantile(x, [0.25, 0.5, 0.75])
    counts, edges = np.histogram(x, bins=HISTOGRAM_BINS)
    return Summary(
        n=int(x.size),
        mean=float(x.mean()),
        median=float(med),
        q1=float(q1),
        q3=float(q3),
        std=float(x.std()),
        histogram=[int(c) for c in counts],
        bin_edges=(float(edges[0]), float(edges[-1])),
    )
