"""Kernel catalogue and Gram matrices.

Data matrices are ``d x n`` with one sample per column. ``cross_gram(spec, a, b)``
returns the ``n_a x n_b`` matrix of kernel values between columns.

The angular kernel is ``(1/pi) |u| |v| (sin t + (pi - t) cos t)`` with ``t``
the angle between ``u`` and ``v``. This is the same closed form as the
first-order arc-cosine kernel, so ``arc_cosine_order1`` is an alias.
Matern and exponential-cosine use the usual textbook forms::

    matern32:   (1 + sqrt(3) r / l) exp(-sqrt(3) r / l)
    exp_cosine: exp((cos t - 1) / l)
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

KINDS = ("linear", "angular", "arc_cosine_order1", "cosine", "exp_cosine", "rbf", "matern32")
_BANDWIDTH_KINDS = ("rbf", "matern32", "exp_cosine")
_ZERO = 1e-12


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "angular"
    bandwidth: float = 1.0
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}; expected one of {KINDS}")
        if self.bandwidth <= 0:
            raise ValueError(f"bandwidth must be > 0, got {self.bandwidth}")
        if self.scale <= 0:
            raise ValueError(f"scale must be > 0, got {self.scale}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "KernelSpec":
        if isinstance(d, KernelSpec):
            return d
        if isinstance(d, str):
            return cls(kind=d)
        d = dict(d)
        unknown = set(d) - {"kind", "bandwidth", "scale"}
        if unknown:
            raise ValueError(f"unknown kernel key {sorted(unknown)[0]!r}")
        return cls(**d)


def _angles(a: np.ndarray, b: np.ndarray):
    """Norm products and clamped cosines between the columns of ``a`` and ``b``."""
    na = np.linalg.norm(a, axis=0)
    nb = np.linalg.norm(b, axis=0)
    norms = np.outer(na, nb)
    safe = np.where(norms > _ZERO, norms, 1.0)
    cos = np.clip((a.T @ b) / safe, -1.0, 1.0)
    cos = np.where(norms > _ZERO, cos, 0.0)
    return norms, cos


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d2 = (a * a).sum(axis=0)[:, None] + (b * b).sum(axis=0)[None, :] - 2.0 * (a.T @ b)
    return np.maximum(d2, 0.0)


def cross_gram(spec: KernelSpec, a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ValueError(f"dimension mismatch between {a.shape} and {b.shape}")
    kind = spec.kind
    if kind == "linear":
        k = a.T @ b
    elif kind in ("angular", "arc_cosine_order1"):
        norms, cos = _angles(a, b)
        theta = np.arccos(cos)
        k = norms * (np.sin(theta) + (np.pi - theta) * cos) / np.pi
        k = np.where(norms > _ZERO, k, 0.0)
    elif kind == "cosine":
        _, cos = _angles(a, b)
        k = cos
    elif kind == "exp_cosine":
        norms, cos = _angles(a, b)
        k = np.where(norms > _ZERO, np.exp((cos - 1.0) / spec.bandwidth), 0.0)
    elif kind == "rbf":
        k = np.exp(-_sq_dists(a, b) / (2.0 * spec.bandwidth ** 2))
    else:  # matern32
        r = np.sqrt(3.0 * _sq_dists(a, b)) / spec.bandwidth
        k = (1.0 + r) * np.exp(-r)
    return spec.scale * k


def kernel_eval(spec: KernelSpec, u, v) -> float:
    u = np.asarray(u, dtype=np.float64).reshape(-1, 1)
    v = np.asarray(v, dtype=np.float64).reshape(-1, 1)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape[0]} vs {v.shape[0]}")
    return float(cross_gram(spec, u, v)[0, 0])


def gram(spec: KernelSpec, data) -> np.ndarray:
    """Symmetric Gram matrix of the columns of ``data``.

    The upper triangle is mirrored so the result is exactly symmetric.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] < 1:
        raise ValueError(f"need a d x n data matrix with n >= 1, got shape {data.shape}")
    k = cross_gram(spec, data, data)
    upper = np.triu(k)
    return upper + np.triu(k, 1).T


def is_psd(k: np.ndarray, rel_tol: float = 1e-8) -> bool:
    w = np.linalg.eigvalsh(0.5 * (k + k.T))
    return bool(w[0] >= -rel_tol * max(abs(w[-1]), 0.0))


def unit_columns(data) -> np.ndarray:
    """Scale columns to unit length; zero columns are left untouched."""
    data = np.asarray(data, dtype=np.float64)
    norms = np.linalg.norm(data, axis=0)
    return data / np.where(norms > _ZERO, norms, 1.0)
