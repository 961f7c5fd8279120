"""Closed-form spectral alignment of paired embeddings under contrastive losses."""

from .aggregate import BatchEnsemble, FusionStrategy, ensemble_similarity, fit_ensemble, partition
from .evaluate import RetrievalReport, gradcheck, matching_accuracy, recall_at_k
from .kernels import KernelSpec, cross_gram, gram
from .linalg import SpectralConfig, svd_randomized, svd_truncated
from .loss import LossFamily, PairedBatch, cosine_similarity, loss_value, preset
from .simweights import contrastive_weights, weights_generalized, weights_one_to_one
from .solver import FixedPointConfig, KernelModel, LinearModel, fit_kernel, fit_linear, infer_kernel
from .synth import SynthConfig, generate, split

__version__ = "0.1.0"

__all__ = [
    "BatchEnsemble", "FusionStrategy", "ensemble_similarity", "fit_ensemble", "partition",
    "RetrievalReport", "gradcheck", "matching_accuracy", "recall_at_k",
    "KernelSpec", "cross_gram", "gram",
    "SpectralConfig", "svd_randomized", "svd_truncated",
    "LossFamily", "PairedBatch", "cosine_similarity", "loss_value", "preset",
    "contrastive_weights", "weights_generalized", "weights_one_to_one",
    "FixedPointConfig", "KernelModel", "LinearModel", "fit_kernel", "fit_linear", "infer_kernel",
    "SynthConfig", "generate", "split",
]
