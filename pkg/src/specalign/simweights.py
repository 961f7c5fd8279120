"""Contrastive similarity weight matrices.

The weight matrix ``W`` of a batch is the negative gradient of the contrastive
loss with respect to the similarity matrix, ``W[i, j] = -dL/ds[i, j]``. Its
entries are built from per-direction coefficients: ``gamma`` for the
x-anchored term and ``gamma_bar`` for the y-anchored term. Diagonal (positive)
entries come out positive (attraction), off-diagonal entries negative
(repulsion).

Two routes are provided. :func:`weights_generalized` handles an arbitrary
positive mask; :func:`weights_one_to_one` is the diagonal-mask shortcut built
from the per-pair ``alpha`` coefficients. They must agree on diagonal masks.
"""

from __future__ import annotations

import numpy as np

from .loss import LossFamily, check_mask


def _direction_weights(family: LossFamily) -> tuple[float, float]:
    return (0.5, 0.5) if family.bidirectional else (1.0, 0.0)


def _anchor_gamma(family: LossFamily, s: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Coefficients ``gamma[i, j] / |P(i)|`` of the x-anchored loss term.

    Works over the list of positive pairs (i, k), so the cost is
    O(#positives * n); a fully dense mask degrades to the cubic case.
    """
    n_rows, n_cols = s.shape
    nu = family.nu
    pi, pk = np.nonzero(mask)
    s_pos = s[pi, pk]
    gaps = s[pi, :] - nu * s_pos[:, None]          # s_im - nu * s_ik
    neg = ~mask[pi, :]
    own = (1.0 - nu) * s_pos

    arg = (family.epsilon_diag * family.psi_fn(own)
           + (family.epsilon_offdiag * family.psi_fn(gaps) * neg).sum(axis=1))
    dphi = family.dphi(arg)
    dpsi_gaps = family.epsilon_offdiag * family.dpsi(gaps) * neg

    gamma = np.zeros((n_rows, n_cols))
    # negatives: sum over positives k of phi'_ik * eps * psi'(s_ij - nu s_ik)
    np.add.at(gamma, pi, dphi[:, None] * dpsi_gaps)
    # positives overwrite: their columns received nothing above
    gamma[pi, pk] = dphi * (family.epsilon_diag * (1.0 - nu) * family.dpsi(own)
                            - nu * dpsi_gaps.sum(axis=1))
    return gamma / mask.sum(axis=1)[:, None]


def weights_generalized(family: LossFamily, s, mask=None) -> np.ndarray:
    """Weight matrix for an arbitrary (many-to-many) positive mask."""
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError(f"similarity must be square, got shape {s.shape}")
    n = s.shape[0]
    mask = np.eye(n, dtype=bool) if mask is None else check_mask(mask, s.shape)
    w_row, w_col = _direction_weights(family)
    out = w_row * _anchor_gamma(family, s, mask)
    if w_col:
        out = out + w_col * _anchor_gamma(family, s.T, mask.T).T
    return -out / n


def alpha_coefficients(family: LossFamily, s) -> tuple[np.ndarray, np.ndarray]:
    """Per-pair ``alpha`` (row-anchored) and ``alpha_bar`` (column-anchored)."""
    s = np.asarray(s, dtype=np.float64)
    n = s.shape[0]
    eps = np.full((n, n), family.epsilon_offdiag)
    np.fill_diagonal(eps, family.epsilon_diag)
    diag = np.diag(s)

    row_gap = s - family.nu * diag[:, None]        # [i, j] = s_ij - nu s_ii
    row_phi = family.dphi((eps * family.psi_fn(row_gap)).sum(axis=1))
    alpha = eps * row_phi[:, None] * family.dpsi(row_gap)

    col_gap = s.T - family.nu * diag[:, None]      # [i, j] = s_ji - nu s_ii
    col_phi = family.dphi((eps * family.psi_fn(col_gap)).sum(axis=1))
    alpha_bar = eps * col_phi[:, None] * family.dpsi(col_gap)
    return alpha, alpha_bar


def weights_one_to_one(family: LossFamily, s) -> np.ndarray:
    """Weight matrix when the positives are exactly the diagonal. O(n^2)."""
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError(f"similarity must be square, got shape {s.shape}")
    n = s.shape[0]
    alpha, alpha_bar = alpha_coefficients(family, s)
    w_row, w_col = _direction_weights(family)
    pair = w_row * alpha + w_col * alpha_bar.T
    pos = (family.nu * (w_row * alpha + w_col * alpha_bar).sum(axis=1)
           - (w_row * np.diag(alpha) + w_col * np.diag(alpha_bar)))
    out = -pair
    np.fill_diagonal(out, pos)
    return out / n


def contrastive_weights(family: LossFamily, s, mask=None) -> np.ndarray:
    """Pick the cheapest exact route for ``mask`` (None means one-to-one)."""
    if mask is None:
        return weights_one_to_one(family, s)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape[0] == mask.shape[1] and np.array_equal(mask, np.eye(mask.shape[0], dtype=bool)):
        return weights_one_to_one(family, s)
    return weights_generalized(family, s, mask)


def beta_coefficients(family: LossFamily, s):
    """Pair and positive coefficients of the identity-map special case.

    Only defined when both scalar maps are the identity. Computed literally,
    entry by entry, so it can serve as an independent check on
    :func:`weights_one_to_one`::

        X W Y^T == (1/n) sum_i beta_pos[i] x_i y_i^T
                   - (1/n) sum_{i != j} beta_pair[i, j] x_i y_j^T
    """
    if family.phi != "identity" or family.psi != "identity":
        raise ValueError("beta coefficients require identity phi and psi")
    s = np.asarray(s, dtype=np.float64)
    n = s.shape[0]
    nu = family.nu

    def eps(i, j):
        return family.epsilon_diag if i == j else family.epsilon_offdiag

    alpha = np.zeros((n, n))
    alpha_bar = np.zeros((n, n))
    for i in range(n):
        row_sum = sum(eps(i, m) * family.psi_fn(s[i, m] - nu * s[i, i]) for m in range(n))
        col_sum = sum(eps(i, m) * family.psi_fn(s[m, i] - nu * s[i, i]) for m in range(n))
        for j in range(n):
            alpha[i, j] = eps(i, j) * family.dphi(row_sum) * family.dpsi(s[i, j] - nu * s[i, i])
            alpha_bar[i, j] = eps(i, j) * family.dphi(col_sum) * family.dpsi(s[j, i] - nu * s[i, i])

    beta_pair = np.zeros((n, n))
    beta_pos = np.zeros(n)
    for i in range(n):
        for j in range(n):
            beta_pair[i, j] = (alpha[i, j] + alpha_bar[j, i]) / 2.0
        beta_pos[i] = (nu * sum((alpha[i, j] + alpha_bar[i, j]) / 2.0 for j in range(n))
                       - (alpha[i, i] + alpha_bar[i, i]) / 2.0)
    return beta_pair, beta_pos
