"""Dense spectral primitives used by the alignment solvers.

Everything here works on plain ``float64`` numpy arrays. Matrices follow the
column-sample convention of the rest of the package (a d x n data matrix holds
one sample per column).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

SYMMETRY_TOL = 1e-8


class TruncatedSVD(NamedTuple):
    """Leading singular triplets, values sorted non-increasing."""

    U: np.ndarray
    singular_values: np.ndarray
    V: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.singular_values) @ self.V.T


@dataclass(frozen=True)
class SpectralConfig:
    """Knobs for the closed-form spectral step.

    ``tikhonov_lambda=None`` selects the data-dependent default of
    ``1e-6 * trace(K) / n`` when regularising Gram roots.
    """

    rank: int = 10
    tikhonov_lambda: Optional[float] = None
    pinv_threshold: float = 1e-10
    rsvd_oversampling: int = 10
    rsvd_power_iters: int = 2
    use_randomized: bool = False

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError(f"rank must be >= 1, got {self.rank}")
        if self.rsvd_oversampling < 0:
            raise ValueError("rsvd_oversampling must be >= 0")
        if self.rsvd_power_iters < 0:
            raise ValueError("rsvd_power_iters must be >= 0")
        if self.tikhonov_lambda is not None and self.tikhonov_lambda < 0:
            raise ValueError("tikhonov_lambda must be nonnegative")
        if self.pinv_threshold < 0:
            raise ValueError("pinv_threshold must be nonnegative")

    def gram_lambda(self, k: np.ndarray) -> float:
        if self.tikhonov_lambda is not None:
            return float(self.tikhonov_lambda)
        n = k.shape[0]
        return 1e-6 * float(np.trace(k)) / n


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    """Return ``m`` as a finite 2-D float64 array or raise ``ValueError``."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        bad = np.argwhere(~np.isfinite(a))[0]
        raise ValueError(f"{name} has a non-finite entry at {tuple(int(i) for i in bad)}")
    return a


def _check_rank(m: np.ndarray, r: int) -> None:
    if not 1 <= r <= min(m.shape):
        raise ValueError(f"rank {r} out of range [1, {min(m.shape)}] for shape {m.shape}")


def svd_truncated(m, r: int) -> TruncatedSVD:
    """Exact rank-``r`` SVD (the Eckart-Young optimal truncation)."""
    a = as_matrix(m)
    _check_rank(a, r)
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    return TruncatedSVD(u[:, :r], s[:r], vt[:r].T)


def svd_randomized(m, r: int, oversampling: int = 10, power_iters: int = 2,
                   seed: int = 0) -> TruncatedSVD:
    """Randomized range-finder SVD with subspace power iterations.

    The sketch uses a Gaussian test matrix with ``r + oversampling`` columns
    drawn from ``numpy.random.default_rng(seed)``, so results are
    reproducible bit-for-bit for a fixed seed. Each power iteration is
    re-orthonormalised with QR to keep small singular directions from
    being washed out in floating point.
    """
    a = as_matrix(m)
    _check_rank(a, r)
    if oversampling < 0 or power_iters < 0:
        raise ValueError("oversampling and power_iters must be nonnegative")
    ell = r + oversampling
    if ell > min(a.shape):
        raise ValueError(
            f"rank + oversampling = {ell} exceeds min(shape) = {min(a.shape)}")

    rng = np.random.default_rng(seed)
    omega = rng.standard_normal((a.shape[1], ell))
    q, _ = np.linalg.qr(a @ omega)
    for _ in range(power_iters):
        w, _ = np.linalg.qr(a.T @ q)
        q, _ = np.linalg.qr(a @ w)

    b = q.T @ a
    ub, s, vt = np.linalg.svd(b, full_matrices=False)
    return TruncatedSVD((q @ ub)[:, :r], s[:r], vt[:r].T)


def truncated(m, r: int, cfg: Optional[SpectralConfig] = None, seed: int = 0) -> TruncatedSVD:
    """Dispatch to the exact or randomized SVD according to ``cfg``."""
    if cfg is not None and cfg.use_randomized:
        a = as_matrix(m)
        # fall back to the exact path when the sketch would not fit
        if r + cfg.rsvd_oversampling <= min(a.shape):
            return svd_randomized(a, r, cfg.rsvd_oversampling, cfg.rsvd_power_iters, seed)
        return svd_truncated(a, r)
    return svd_truncated(m, r)


def _symmetric(m) -> np.ndarray:
    a = as_matrix(m)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a))) if a.size else 1.0)
    asym = float(np.max(np.abs(a - a.T))) if a.size else 0.0
    if asym > SYMMETRY_TOL * scale:
        raise ValueError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
    return 0.5 * (a + a.T)


def sym_eig(m):
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvectors in columns.
    """
    a = _symmetric(m)
    w, q = np.linalg.eigh(a)
    return w[::-1].copy(), q[:, ::-1].copy()


def psd_sqrt(m, lam: float = 0.0) -> np.ndarray:
    """Square root of ``m + lam*I`` with negative eigenvalues clamped to zero."""
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    w, q = sym_eig(m)
    root = np.sqrt(np.clip(w + lam, 0.0, None))
    return (q * root) @ q.T


def psd_pinv_sqrt(m, rel_threshold: float = 1e-10, lam: float = 0.0) -> np.ndarray:
    """Moore-Penrose inverse square root of ``m + lam*I``.

    Eigenvalues below ``rel_threshold * max eigenvalue`` are treated as zero
    and contribute nothing. An all-zero input yields the zero matrix.
    """
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    w, q = sym_eig(m)
    w = w + lam
    top = float(w[0]) if w.size else 0.0
    if top <= 0.0:
        return np.zeros_like(q)
    keep = w > rel_threshold * top
    inv_root = np.zeros_like(w)
    inv_root[keep] = 1.0 / np.sqrt(w[keep])
    return (q * inv_root) @ q.T


def haar_orthogonal(d: int, r: int, seed: int) -> np.ndarray:
    """First ``r`` columns of a Haar-distributed orthogonal ``d x d`` matrix.

    Built from the QR factorisation of a seeded Gaussian matrix; the sign of
    each column is flipped so that R has a positive diagonal, which is what
    makes the distribution exactly Haar rather than merely orthogonal.
    """
    if r > d or r < 1:
        raise ValueError(f"need 1 <= r <= d, got r={r}, d={d}")
    rng = np.random.default_rng(seed)
    q, rr = np.linalg.qr(rng.standard_normal((d, r)))
    signs = np.sign(np.diag(rr))
    signs[signs == 0] = 1.0
    return q * signs
