"""Mini-batch partitioning and fusion of per-batch models.

Each sub-batch gets its own spectral fit. Models are then scored on a
validation batch and their similarity predictions combined. Fusion happens
at the score level because kernel models from different batches expand over
different reference samples, so their coefficient operators do not live in a
common space. Linear models do share one, and :func:`linear_operator_sum`
covers that case.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .kernels import KernelSpec
from .loss import LossFamily, PairedBatch
from .solver import FixedPointConfig, KernelModel, LinearModel, fit_kernel, fit_linear

FUSION_KINDS = ("accuracy_weighted", "softmax_accuracy", "majority_vote")
STRATEGY_IDS = {"accuracy": "accuracy_weighted", "softmax": "softmax_accuracy", "vote": "majority_vote"}
SCHEMES = ("random", "balanced")

Model = Union[LinearModel, KernelModel]


@dataclass(frozen=True)
class FusionStrategy:
    kind: str = "accuracy_weighted"
    softmax_temp: float = 1.0

    def __post_init__(self):
        if self.kind not in FUSION_KINDS:
            raise ValueError(f"unknown fusion kind {self.kind!r}; expected one of {FUSION_KINDS}")
        if self.softmax_temp <= 0:
            raise ValueError(f"softmax_temp must be > 0, got {self.softmax_temp}")

    @classmethod
    def from_id(cls, ident: str, softmax_temp: float = 1.0) -> "FusionStrategy":
        kind = STRATEGY_IDS.get(ident, ident)
        return cls(kind, softmax_temp)

    def weights(self, accuracies) -> np.ndarray:
        a = np.asarray(accuracies, dtype=np.float64)
        if a.ndim != 1 or a.size == 0:
            raise ValueError("need at least one accuracy")
        if self.kind == "majority_vote":
            return np.full(a.size, 1.0 / a.size)
        if self.kind == "softmax_accuracy":
            z = a / self.softmax_temp
            e = np.exp(z - z.max())
            return e / e.sum()
        total = a.sum()
        if total <= 0:
            warnings.warn("every batch model has zero validation accuracy; using uniform weights",
                          RuntimeWarning, stacklevel=2)
            return np.full(a.size, 1.0 / a.size)
        return a / total


@dataclass
class BatchEnsemble:
    models: list
    weights: np.ndarray
    strategy: FusionStrategy = field(default_factory=FusionStrategy)
    val_accuracies: Optional[np.ndarray] = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if len(self.models) == 0:
            raise ValueError("ensemble needs at least one model")
        if self.weights.shape != (len(self.models),):
            raise ValueError("one weight per model required")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-10:
            raise ValueError("ensemble weights must be a probability vector")

    def similarity(self, x_new, y_new) -> np.ndarray:
        return ensemble_similarity(self, x_new, y_new)


def partition(batch: PairedBatch, batch_size: int, scheme: str = "random",
              seed: int = 0) -> list[PairedBatch]:
    """Split into disjoint sub-batches of ``batch_size`` (the last may be short).

    ``balanced`` interleaves the classes round-robin before cutting so every
    sub-batch sees a similar class mix. A trailing sub-batch of one sample is
    dropped since it has no negatives.
    """
    if batch_size < 2:
        raise ValueError(f"batch_size must be >= 2, got {batch_size}")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown partition scheme {scheme!r}; expected one of {SCHEMES}")
    rng = np.random.default_rng(seed)
    n = batch.n
    if scheme == "random":
        order = rng.permutation(n)
    else:
        if batch.labels is None:
            raise ValueError("balanced partitioning needs class labels")
        queues = [rng.permutation(np.flatnonzero(batch.labels == c))
                  for c in np.unique(batch.labels)]
        order = []
        depth = max(len(q) for q in queues)
        for k in range(depth):
            order.extend(int(q[k]) for q in queues if k < len(q))
        order = np.asarray(order)

    chunks = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(chunks[-1]) < 2:
        warnings.warn(f"dropping a trailing sub-batch of {len(chunks[-1])} sample(s)",
                      RuntimeWarning, stacklevel=2)
        chunks = chunks[:-1]
    return [_sub_batch(batch, idx) for idx in chunks]


def _sub_batch(batch: PairedBatch, idx) -> PairedBatch:
    if batch.mask is None:
        return batch.subset(idx)
    # positives outside the chunk are lost; keep only samples that retain one
    sub = batch.mask[np.ix_(idx, idx)]
    keep = sub.any(axis=1) & sub.any(axis=0)
    return batch.subset(np.asarray(idx)[keep])


def validation_accuracy(model: Model, val: PairedBatch) -> float:
    from .evaluate import matching_accuracy
    return matching_accuracy(model.similarity(val.x, val.y), val.mask)[2]


def fit_ensemble(sub_batches: Sequence[PairedBatch], val: PairedBatch, family: LossFamily,
                 spec_x: Optional[KernelSpec], spec_y: Optional[KernelSpec], r: int,
                 cfg: Optional[FixedPointConfig] = None,
                 strategy: Optional[FusionStrategy] = None, seed: int = 0) -> BatchEnsemble:
    """Fit one model per sub-batch and weight them by validation accuracy.

    Pass ``spec_x = spec_y = None`` for linear batch models.
    """
    if val is None or val.n == 0:
        raise ValueError("fit_ensemble needs a non-empty validation batch")
    if not sub_batches:
        raise ValueError("no sub-batches to fit")
    strategy = strategy or FusionStrategy()
    models = []
    for k, sb in enumerate(sub_batches):
        if spec_x is None:
            models.append(fit_linear(sb, family, r, cfg, seed=seed + k))
        else:
            models.append(fit_kernel(sb, family, spec_x, spec_y, r, cfg, seed=seed + k))
    acc = np.array([validation_accuracy(m, val) for m in models])
    return BatchEnsemble(models, strategy.weights(acc), strategy, acc)


def _vote(sims: list[np.ndarray]) -> np.ndarray:
    m, p = sims[0].shape
    counts = np.zeros((m, p))
    rows = np.arange(m)
    for s in sims:
        counts[rows, np.argmax(s, axis=1)] += 1
    out = np.zeros((m, p))
    out[rows, np.argmax(counts, axis=1)] = 1.0
    return out


def ensemble_similarity(ens: BatchEnsemble, x_new, y_new) -> np.ndarray:
    sims = []
    for model in ens.models:
        s = model.similarity(x_new, y_new)
        if sims and s.shape != sims[0].shape:
            raise ValueError("batch models disagree on output shape")
        sims.append(s)
    if ens.strategy.kind == "majority_vote":
        return _vote(sims)
    return sum(w * s for w, s in zip(ens.weights, sims))


def linear_operator_sum(ens: BatchEnsemble) -> np.ndarray:
    """Weighted sum of the ``F1^T F2`` operators of linear batch models."""
    if not all(isinstance(m, LinearModel) for m in ens.models):
        raise ValueError("operator summation is only defined for linear batch models")
    return sum(w * m.operator for w, m in zip(ens.weights, ens.models))
