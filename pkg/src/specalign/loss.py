"""Generalized contrastive loss family.

A loss is selected by a pair of scalar maps (``phi`` on the per-anchor sum,
``psi`` on each similarity gap) plus the positive-pair scale ``nu``, the
temperature ``tau``, the hinge margin and the two-level ``epsilon`` weights.
The presets below recover CLIP, InfoNCE, triplet and the identity (linear)
loss.

Similarity matrices are indexed ``s[i, j] = sim(x_i, y_j)`` and the positive
mask ``mask[i, j]`` is true when ``y_j`` is a positive partner of ``x_i``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Optional

import numpy as np

PHI_IDS = ("identity", "tau_log", "tau_log1p")
PSI_IDS = ("identity", "exp_over_tau", "hinge_margin")

# guard inside phi' for the log-type maps
PHI_GUARD = 1e-8
ZERO_NORM = 1e-12


@dataclass(frozen=True)
class LossFamily:
    phi: str = "tau_log"
    psi: str = "exp_over_tau"
    nu: float = 1.0
    tau: float = 1.0
    margin: float = 0.5
    epsilon_diag: float = 1.0
    epsilon_offdiag: float = 1.0
    bidirectional: bool = True
    rho: float = 1.0

    def __post_init__(self):
        if self.phi not in PHI_IDS:
            raise ValueError(f"unknown phi {self.phi!r}; expected one of {PHI_IDS}")
        if self.psi not in PSI_IDS:
            raise ValueError(f"unknown psi {self.psi!r}; expected one of {PSI_IDS}")
        if self.nu < 1:
            raise ValueError(f"nu must be >= 1, got {self.nu}")
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.rho <= 0:
            raise ValueError(f"rho must be > 0, got {self.rho}")
        if self.margin < 0:
            raise ValueError(f"margin must be >= 0, got {self.margin}")
        for name in ("epsilon_diag", "epsilon_offdiag"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    # scalar maps, all vectorised over numpy arrays

    def phi_fn(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.phi == "identity":
            return x
        if self.phi == "tau_log":
            return self.tau * np.log(x)
        return self.tau * np.log1p(x)

    def dphi(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.phi == "identity":
            return np.ones_like(x)
        if self.phi == "tau_log":
            return self.tau / (x + PHI_GUARD)
        return self.tau / (1.0 + x + PHI_GUARD)

    def psi_fn(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.psi == "identity":
            return x
        if self.psi == "exp_over_tau":
            return np.exp(x / self.tau)
        return np.maximum(0.0, x + self.margin)

    def dpsi(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.psi == "identity":
            return np.ones_like(x)
        if self.psi == "exp_over_tau":
            return np.exp(x / self.tau) / self.tau
        # one-sided subgradient: zero at the kink
        return (x + self.margin > 0).astype(np.float64)

    @property
    def differentiable(self) -> bool:
        return self.psi != "hinge_margin"

    def to_dict(self) -> dict:
        return asdict(self)


PRESETS = {
    "clip": LossFamily(),
    # mirrors the log1p variant used by the reference listing
    "clip-log1p": LossFamily(phi="tau_log1p"),
    "infonce": LossFamily(bidirectional=False),
    "triplet": LossFamily(phi="identity", psi="hinge_margin", epsilon_diag=0.0),
    "identity": LossFamily(phi="identity", psi="identity"),
}


def preset(name: str, **overrides) -> LossFamily:
    """Look up a preset by id and apply field overrides."""
    try:
        base = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown loss preset {name!r}; expected one of {sorted(PRESETS)}") from None
    return replace(base, **overrides) if overrides else base


def from_config(cfg) -> LossFamily:
    """Build a family from ``"clip"`` or ``{"preset": "clip", "tau": 0.5, ...}``."""
    if isinstance(cfg, LossFamily):
        return cfg
    if isinstance(cfg, str):
        return preset(cfg)
    cfg = dict(cfg)
    name = cfg.pop("preset", "clip")
    known = set(LossFamily.__dataclass_fields__)
    for key in cfg:
        if key not in known:
            raise ValueError(f"unknown loss override {key!r}")
    return preset(name, **cfg)


def check_mask(mask, shape) -> np.ndarray:
    """Validate a positive mask: boolean, right shape, no empty row/column."""
    m = np.asarray(mask, dtype=bool)
    if m.shape != tuple(shape):
        raise ValueError(f"mask shape {m.shape} does not match similarity shape {tuple(shape)}")
    rows = np.flatnonzero(~m.any(axis=1))
    if rows.size:
        raise ValueError(f"x sample {int(rows[0])} has an empty positive set")
    cols = np.flatnonzero(~m.any(axis=0))
    if cols.size:
        raise ValueError(f"y sample {int(cols[0])} has an empty positive set")
    return m


@dataclass
class PairedBatch:
    """``n`` paired samples stored column-wise, plus their positive mask.

    ``mask=None`` means one-to-one pairing (the identity mask) and keeps the
    fast diagonal code paths available.
    """

    x: np.ndarray
    y: np.ndarray
    mask: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.x.ndim != 2 or self.y.ndim != 2:
            raise ValueError("x and y must be 2-D (features x samples)")
        if self.x.shape[1] != self.y.shape[1]:
            raise ValueError(f"x has {self.x.shape[1]} samples but y has {self.y.shape[1]}")
        if self.mask is not None:
            self.mask = check_mask(self.mask, (self.n, self.n))
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if self.labels.shape != (self.n,):
                raise ValueError("labels must have one entry per sample")

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def pos_mask(self) -> np.ndarray:
        return np.eye(self.n, dtype=bool) if self.mask is None else self.mask

    def subset(self, idx) -> "PairedBatch":
        idx = np.asarray(idx)
        mask = None if self.mask is None else self.mask[np.ix_(idx, idx)]
        labels = None if self.labels is None else self.labels[idx]
        return PairedBatch(self.x[:, idx], self.y[:, idx], mask, labels)


def cosine_similarity(ex, ey) -> np.ndarray:
    """Cosine similarity between the columns of ``ex`` (r x n) and ``ey`` (r x m)."""
    ex = np.asarray(ex, dtype=np.float64)
    ey = np.asarray(ey, dtype=np.float64)
    if ex.ndim != 2 or ey.ndim != 2 or ex.shape[0] != ey.shape[0]:
        raise ValueError(f"embedding shapes {ex.shape} and {ey.shape} are incompatible")
    nx = np.linalg.norm(ex, axis=0)
    ny = np.linalg.norm(ey, axis=0)
    for side, norms in (("x", nx), ("y", ny)):
        bad = np.flatnonzero(norms < ZERO_NORM)
        if bad.size:
            raise ValueError(f"{side} embedding column {int(bad[0])} has zero norm")
    return (ex / nx).T @ (ey / ny)


def _row_term(family: LossFamily, s: np.ndarray, mask: np.ndarray) -> float:
    """Sum over anchors i of the 1/|P(i)|-averaged phi terms for one direction."""
    pi, pk = np.nonzero(mask)
    s_pos = s[pi, pk]
    gaps = s[pi, :] - family.nu * s_pos[:, None]
    neg = ~mask[pi, :]
    arg = (family.epsilon_diag * family.psi_fn((1.0 - family.nu) * s_pos)
           + (family.epsilon_offdiag * family.psi_fn(gaps) * neg).sum(axis=1))
    counts = mask.sum(axis=1)
    return float(np.sum(family.phi_fn(arg) / counts[pi]))


def loss_value(family: LossFamily, s, mask=None) -> float:
    """Evaluate the contrastive loss on a similarity matrix (regularizer excluded).

    With ``mask=None`` the diagonal is taken as the positive set. The
    one-directional form keeps only the x-anchored term and normalises by
    ``1/n`` so that it coincides with the bidirectional value whenever ``s``
    is symmetric.
    """
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError(f"similarity must be square, got shape {s.shape}")
    n = s.shape[0]
    mask = np.eye(n, dtype=bool) if mask is None else check_mask(mask, s.shape)
    row = _row_term(family, s, mask)
    if not family.bidirectional:
        return row / n
    col = _row_term(family, s.T, mask.T)
    return (row + col) / (2.0 * n)


def loss_grad_wrt_similarity(family: LossFamily, s, mask=None, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of :func:`loss_value` in ``s``."""
    s = np.array(s, dtype=np.float64)
    grad = np.empty_like(s)
    for idx in np.ndindex(*s.shape):
        orig = s[idx]
        s[idx] = orig + h
        up = loss_value(family, s, mask)
        s[idx] = orig - h
        down = loss_value(family, s, mask)
        s[idx] = orig
        grad[idx] = (up - down) / (2.0 * h)
    return grad
