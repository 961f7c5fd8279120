"""Closed-form spectral alignment solvers.

Linear case: with encoders ``x -> F1 x`` and ``y -> F2 y`` the regularised
trace objective ``tr(F1 C F2^T) - rho/2 ||F1^T F2||_F^2`` is maximised by
``F1^T F2 = [C]_r / rho`` where ``C = X W Y^T`` is the weighted contrastive
covariance and ``[.]_r`` the best rank-r approximation.

Kernel case: with coefficient matrices ``A, B`` over reference samples, the
maximiser satisfies ``Kx^{1/2} A B^T Ky^{1/2} = [M]_r / rho`` where
``M = Kx^{1/2} W Ky^{1/2}``. We return the explicit choice
``A = Kx^{-1/2} U_r`` and ``B = Ky^{-1/2} V_r Sigma_r / rho``.

Because ``W`` depends on the current embeddings, :func:`fit_linear` and
:func:`fit_kernel` iterate the closed-form step to a fixed point.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import linalg
from .kernels import KernelSpec, cross_gram, gram, unit_columns
from .linalg import SpectralConfig
from .loss import LossFamily, PairedBatch, ZERO_NORM, cosine_similarity
from .simweights import contrastive_weights


WEIGHT_UPDATES = ("replace", "average")


@dataclass(frozen=True)
class FixedPointConfig:
    max_iters: int = 20
    rel_tol: float = 1e-4
    spectral: SpectralConfig = field(default_factory=SpectralConfig)
    # "replace" uses the current weights as is (plain fixed-point map);
    # "average" feeds the running mean of all weight matrices so far into the
    # spectral step. Hinge losses need the latter: their active set flips
    # between iterations and the plain map oscillates.
    weight_update: str = "replace"

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be > 0")
        if self.weight_update not in WEIGHT_UPDATES:
            raise ValueError(f"weight_update must be one of {WEIGHT_UPDATES}, got {self.weight_update!r}")


def _update_weights(w_new: np.ndarray, w_prev: Optional[np.ndarray], it: int, mode: str) -> np.ndarray:
    if w_prev is None or mode == "replace":
        return w_new
    return w_prev + (w_new - w_prev) / (it + 1)


@dataclass
class FitDiagnostics:
    iterations: int = 0
    converged: bool = False
    rel_changes: list = field(default_factory=list)
    objectives: list = field(default_factory=list)
    singular_values: list = field(default_factory=list)
    weight_snapshots: list = field(default_factory=list)
    wall_time_seconds: float = 0.0

    def summary(self) -> dict:
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "rel_changes": [float(c) for c in self.rel_changes],
            "objectives": [float(o) for o in self.objectives],
            "wall_time_seconds": self.wall_time_seconds,
        }


@dataclass
class LinearModel:
    f1: np.ndarray
    f2: np.ndarray
    rho: float = 1.0
    diagnostics: Optional[FitDiagnostics] = field(default=None, repr=False, compare=False)

    kind = "linear"

    @property
    def operator(self) -> np.ndarray:
        return self.f1.T @ self.f2

    def embed(self, x_new, y_new):
        x_new = np.asarray(x_new, dtype=np.float64)
        y_new = np.asarray(y_new, dtype=np.float64)
        if x_new.shape[0] != self.f1.shape[1] or y_new.shape[0] != self.f2.shape[1]:
            raise ValueError(
                f"feature dims {x_new.shape[0]}/{y_new.shape[0]} do not match model "
                f"{self.f1.shape[1]}/{self.f2.shape[1]}")
        return self.f1 @ x_new, self.f2 @ y_new

    def similarity(self, x_new, y_new) -> np.ndarray:
        return _safe_similarity(*self.embed(x_new, y_new))


@dataclass
class KernelModel:
    a: np.ndarray
    b: np.ndarray
    ref_x: np.ndarray
    ref_y: np.ndarray
    spec_x: KernelSpec
    spec_y: KernelSpec
    rho: float = 1.0
    normalize: bool = True
    diagnostics: Optional[FitDiagnostics] = field(default=None, repr=False, compare=False)

    kind = "kernel"

    def __post_init__(self):
        if self.a.shape[0] != self.ref_x.shape[1] or self.b.shape[0] != self.ref_y.shape[1]:
            raise ValueError("coefficient rows must match the reference sample counts")

    def embed(self, x_new, y_new):
        x_new = np.asarray(x_new, dtype=np.float64)
        y_new = np.asarray(y_new, dtype=np.float64)
        if x_new.shape[0] != self.ref_x.shape[0] or y_new.shape[0] != self.ref_y.shape[0]:
            raise ValueError(
                f"feature dims {x_new.shape[0]}/{y_new.shape[0]} do not match references "
                f"{self.ref_x.shape[0]}/{self.ref_y.shape[0]}")
        if self.normalize:
            x_new, y_new = unit_columns(x_new), unit_columns(y_new)
        kx = cross_gram(self.spec_x, self.ref_x, x_new)
        ky = cross_gram(self.spec_y, self.ref_y, y_new)
        return self.a.T @ kx, self.b.T @ ky

    def similarity(self, x_new, y_new) -> np.ndarray:
        return _safe_similarity(*self.embed(x_new, y_new))


def _safe_similarity(ex: np.ndarray, ey: np.ndarray) -> np.ndarray:
    """Cosine similarity with zero-norm embeddings mapped to ``-inf``."""
    nx = np.linalg.norm(ex, axis=0)
    ny = np.linalg.norm(ey, axis=0)
    bad_x = nx < ZERO_NORM
    bad_y = ny < ZERO_NORM
    if bad_x.any() or bad_y.any():
        warnings.warn(
            f"zero-norm embeddings: x columns {np.flatnonzero(bad_x).tolist()}, "
            f"y columns {np.flatnonzero(bad_y).tolist()}; similarity set to -inf",
            RuntimeWarning, stacklevel=3)
    sim = (ex / np.where(bad_x, 1.0, nx)).T @ (ey / np.where(bad_y, 1.0, ny))
    sim[bad_x, :] = -np.inf
    sim[:, bad_y] = -np.inf
    return sim


def infer_kernel(model: KernelModel, x_new, y_new):
    """Out-of-sample embeddings and their cross similarity.

    Returns ``(ex, ey, sim)`` with ``ex`` r x m, ``ey`` r x p and ``sim`` m x p.
    """
    ex, ey = model.embed(x_new, y_new)
    return ex, ey, _safe_similarity(ex, ey)


def contrastive_covariance(batch_or_x, w, y=None) -> np.ndarray:
    """``X W Y^T`` for a batch (or explicit ``X``, ``W``, ``Y``)."""
    if y is None:
        x, y = batch_or_x.x, batch_or_x.y
    else:
        x = batch_or_x
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if x.shape[1] != w.shape[0] or y.shape[1] != w.shape[1]:
        raise ValueError(f"shape mismatch: X {x.shape}, W {w.shape}, Y {y.shape}")
    return x @ w @ y.T


def linear_objective(f1, f2, c, rho) -> float:
    prod = f1.T @ f2
    return float(np.trace(f1 @ c @ f2.T) - 0.5 * rho * np.sum(prod * prod))


def _balanced_split(tsvd: linalg.TruncatedSVD, rho: float):
    root = np.sqrt(tsvd.singular_values / rho)
    return root[:, None] * tsvd.U.T, root[:, None] * tsvd.V.T


def linear_spectral_step(c_gamma, r: int, rho: float, cfg: Optional[SpectralConfig] = None,
                         seed: int = 0) -> LinearModel:
    """Closed-form maximiser for a fixed covariance, balanced factor split."""
    if rho <= 0:
        raise ValueError("rho must be > 0")
    tsvd = linalg.truncated(c_gamma, r, cfg, seed)
    f1, f2 = _balanced_split(tsvd, rho)
    return LinearModel(f1, f2, rho)


class _Whitener:
    """Cached square root and pseudo-inverse square root of ``K + lam I``."""

    def __init__(self, k: np.ndarray, cfg: SpectralConfig):
        self.k = k
        self.lam = cfg.gram_lambda(k)
        w, q = linalg.sym_eig(k)
        w = np.clip(w + self.lam, 0.0, None)
        self.sqrt = (q * np.sqrt(w)) @ q.T
        top = float(w[0]) if w.size else 0.0
        keep = w > cfg.pinv_threshold * top if top > 0 else np.zeros_like(w, dtype=bool)
        inv = np.zeros_like(w)
        inv[keep] = 1.0 / np.sqrt(w[keep])
        self.pinv_sqrt = (q * inv) @ q.T


def _kernel_step(wx: _Whitener, wy: _Whitener, w, r, rho, cfg, seed):
    m = wx.sqrt @ w @ wy.sqrt
    tsvd = linalg.truncated(m, r, cfg, seed)
    a = wx.pinv_sqrt @ tsvd.U
    b = wy.pinv_sqrt @ tsvd.V * (tsvd.singular_values / rho)
    return a, b, tsvd


def kernel_spectral_step(kx, ky, w, r: int, rho: float, cfg: Optional[SpectralConfig] = None,
                         seed: int = 0):
    """Explicit kernel maximiser ``(A, B)`` for a fixed weight matrix."""
    cfg = cfg or SpectralConfig(rank=r)
    kx = linalg.as_matrix(kx, "kx")
    ky = linalg.as_matrix(ky, "ky")
    w = linalg.as_matrix(w, "w")
    if kx.shape[0] != w.shape[0] or ky.shape[0] != w.shape[1]:
        raise ValueError(f"shape mismatch: Kx {kx.shape}, W {w.shape}, Ky {ky.shape}")
    if rho <= 0:
        raise ValueError("rho must be > 0")
    a, b, _ = _kernel_step(_Whitener(kx, cfg), _Whitener(ky, cfg), w, r, rho, cfg, seed)
    return a, b


def whitened_operator(kx, ky, w, cfg: Optional[SpectralConfig] = None) -> np.ndarray:
    """``M = (Kx + lam I)^{1/2} W (Ky + lam I)^{1/2}``."""
    cfg = cfg or SpectralConfig()
    return _Whitener(np.asarray(kx, float), cfg).sqrt @ w @ _Whitener(np.asarray(ky, float), cfg).sqrt


def _rel_change(new: np.ndarray, old: np.ndarray) -> float:
    denom = np.linalg.norm(old)
    if denom == 0.0:
        return np.inf
    return float(np.linalg.norm(new - old) / denom)


def fit_linear(batch: PairedBatch, family: LossFamily, r: int,
               cfg: Optional[FixedPointConfig] = None, seed: int = 0,
               record_weights: bool = False) -> LinearModel:
    """Fixed-point spectral fit of a linear encoder pair.

    Non-convergence within ``max_iters`` is reported in the diagnostics, not
    raised.
    """
    cfg = cfg or FixedPointConfig()
    start = time.perf_counter()
    x, y = batch.x, batch.y
    rng = np.random.default_rng(seed)
    f1 = rng.normal(0.0, 0.1, (r, x.shape[0]))
    f2 = rng.normal(0.0, 0.1, (r, y.shape[0]))
    diag = FitDiagnostics()
    prod = f1.T @ f2
    w = None

    for it in range(cfg.max_iters):
        s = cosine_similarity(f1 @ x, f2 @ y)
        w = _update_weights(contrastive_weights(family, s, batch.mask), w, it, cfg.weight_update)
        c = contrastive_covariance(x, w, y)
        tsvd = linalg.truncated(c, r, cfg.spectral, seed + it)
        f1, f2 = _balanced_split(tsvd, family.rho)
        new_prod = f1.T @ f2
        change = _rel_change(new_prod, prod)
        prod = new_prod

        diag.iterations = it + 1
        diag.rel_changes.append(change)
        diag.objectives.append(linear_objective(f1, f2, c, family.rho))
        diag.singular_values.append(tsvd.singular_values.copy())
        if record_weights:
            diag.weight_snapshots.append(w)
        if change < cfg.rel_tol:
            diag.converged = True
            break

    diag.wall_time_seconds = time.perf_counter() - start
    return LinearModel(f1, f2, family.rho, diagnostics=diag)


def fit_kernel(batch: PairedBatch, family: LossFamily, spec_x: KernelSpec, spec_y: KernelSpec,
               r: int, cfg: Optional[FixedPointConfig] = None, seed: int = 0,
               normalize: bool = True, record_weights: bool = False) -> KernelModel:
    """Fixed-point spectral fit of a kernel encoder pair.

    Gram matrices and their roots are computed once; each iteration
    re-estimates the weight matrix from the current in-sample similarities
    and re-solves for ``(A, B)``.
    """
    cfg = cfg or FixedPointConfig()
    start = time.perf_counter()
    x = unit_columns(batch.x) if normalize else np.asarray(batch.x, dtype=np.float64)
    y = unit_columns(batch.y) if normalize else np.asarray(batch.y, dtype=np.float64)
    kx, ky = gram(spec_x, x), gram(spec_y, y)
    wx, wy = _Whitener(kx, cfg.spectral), _Whitener(ky, cfg.spectral)

    n = kx.shape[0]
    rng = np.random.default_rng(seed)
    a = rng.normal(0.0, 0.1, (n, r))
    b = rng.normal(0.0, 0.1, (ky.shape[0], r))
    diag = FitDiagnostics()
    prod = a @ b.T
    w = None

    for it in range(cfg.max_iters):
        s = cosine_similarity(a.T @ kx, b.T @ ky)
        w = _update_weights(contrastive_weights(family, s, batch.mask), w, it, cfg.weight_update)
        a, b, tsvd = _kernel_step(wx, wy, w, r, family.rho, cfg.spectral, seed + it)
        new_prod = a @ b.T
        change = _rel_change(new_prod, prod)
        prod = new_prod

        diag.iterations = it + 1
        diag.rel_changes.append(change)
        sv = tsvd.singular_values
        # objective at the optimum of the whitened problem: sum sigma^2 / (2 rho)
        diag.objectives.append(float(np.sum(sv ** 2) / (2.0 * family.rho)))
        diag.singular_values.append(sv.copy())
        if record_weights:
            diag.weight_snapshots.append(w)
        if change < cfg.rel_tol:
            diag.converged = True
            break

    diag.wall_time_seconds = time.perf_counter() - start
    return KernelModel(a, b, x, y, spec_x, spec_y, family.rho, normalize, diagnostics=diag)


def linear_kernel_spectrum_check(batch: PairedBatch, w, r: int):
    """Top-r singular values of ``X W Y^T`` and of ``(X^T X)^{1/2} W (Y^T Y)^{1/2}``.

    The two operators differ only by orthonormal factors on the effective
    subspace, so their nonzero spectra coincide.
    """
    x = np.asarray(batch.x, dtype=np.float64)
    y = np.asarray(batch.y, dtype=np.float64)
    c = contrastive_covariance(x, w, y)
    m = linalg.psd_sqrt(x.T @ x) @ np.asarray(w, float) @ linalg.psd_sqrt(y.T @ y)
    sv_c = np.linalg.svd(c, compute_uv=False)[:r]
    sv_m = np.linalg.svd(m, compute_uv=False)[:r]
    return sv_c, sv_m
