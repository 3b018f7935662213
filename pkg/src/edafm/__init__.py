"""EDA foundation-model pipeline: ingestion, cvxEDA decomposition, windowing,
contrastive pre-training, handcrafted baselines, linear probing and benchmarking."""

from .errors import EdaError

__version__ = "0.1.0"

__all__ = ["EdaError", "__version__"]
