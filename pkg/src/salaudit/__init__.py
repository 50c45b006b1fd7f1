"""Saliency-metric scoring and reliability checks for image classifiers."""

__version__ = "0.1.0"

from .errors import ConfigError, ContractError, FormatError, SalauditError
from .model import AffineOracle, Image, Network, forward, gradient, load_model, make_affine_oracle
from .perturbation import PerturbationSpec, aopc_curve, faithfulness, pixel_ordering, random_baseline
from .reliability import (
    MetricVariant,
    ScoreTable,
    bootstrap_ci,
    krippendorff_alpha,
    rank_methods,
    spearman,
)
from .rng import derive_stream_seed, stream
from .saliency import SaliencyMap, native_map

__all__ = [
    "AffineOracle", "ConfigError", "ContractError", "FormatError", "Image", "MetricVariant",
    "Network", "PerturbationSpec", "SaliencyMap", "SalauditError", "ScoreTable", "aopc_curve",
    "bootstrap_ci", "derive_stream_seed", "faithfulness", "forward", "gradient",
    "krippendorff_alpha", "load_model", "make_affine_oracle", "native_map", "pixel_ordering",
    "random_baseline", "rank_methods", "spearman", "stream",
]
