"""Seeded latent-factor datasets with cluster structure.

Latent codes ``z`` in R^r are drawn around ``k`` cluster centres and pushed
into the two observation spaces through Haar-random orthonormal projections::

    x = U1 z + noise,   y = U2 z + noise          (linear)
    x = tanh(U1 z + noise), y = tanh(U2 z + noise) (tanh)

Noise is Gaussian with standard deviation ``snr``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .linalg import haar_orthogonal
from .loss import PairedBatch

NONLINEARITIES = ("none", "tanh")


@dataclass(frozen=True)
class SynthConfig:
    n: int = 600
    d1: int = 40
    d2: int = 30
    r_latent: int = 10
    k_clusters: int = 3
    snr: float = 0.3
    nonlinearity: str = "none"
    seed: int = 0
    split: tuple = (0.8, 0.1, 0.1)
    # latent dispersion; the source experiments leave these unstated. Centres
    # are N(0, center_scale^2) and points scatter around them with cluster_std.
    # The within-cluster spread must dominate the observation noise or
    # one-to-one matching inside a cluster is hopeless.
    center_scale: float = 1.0
    cluster_std: float = 2.0

    def __post_init__(self):
        if min(self.n, self.d1, self.d2, self.r_latent, self.k_clusters) < 1:
            raise ValueError("n, d1, d2, r_latent and k_clusters must be positive")
        if self.r_latent > min(self.d1, self.d2):
            raise ValueError(f"r_latent={self.r_latent} exceeds min(d1, d2)={min(self.d1, self.d2)}")
        if self.nonlinearity not in NONLINEARITIES:
            raise ValueError(f"nonlinearity must be one of {NONLINEARITIES}")
        if self.snr < 0 or self.center_scale < 0 or self.cluster_std < 0:
            raise ValueError("snr, center_scale and cluster_std must be nonnegative")
        split = tuple(float(f) for f in self.split)
        if len(split) != 3 or min(split) < 0 or abs(sum(split) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must be three nonnegatives summing to 1, got {split}")
        object.__setattr__(self, "split", split)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split"] = list(self.split)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown synth key {sorted(unknown)[0]!r}")
        d = dict(d)
        if "split" in d:
            d["split"] = tuple(d["split"])
        return cls(**d)


@dataclass
class SynthDataset:
    batch: PairedBatch
    latent: np.ndarray
    labels: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    config: SynthConfig
    # index of the original pair each sample came from (for augmented sets)
    origin: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.batch.n

    def subset(self, idx) -> "SynthDataset":
        idx = np.asarray(idx)
        origin = None if self.origin is None else self.origin[idx]
        return SynthDataset(self.batch.subset(idx), self.latent[:, idx], self.labels[idx],
                            self.u1, self.u2, self.config, origin)


def _observe(u: np.ndarray, z: np.ndarray, snr: float, nonlinearity: str,
             rng: np.random.Generator) -> np.ndarray:
    obs = u @ z + snr * rng.standard_normal((u.shape[0], z.shape[1]))
    return np.tanh(obs) if nonlinearity == "tanh" else obs


def generate(cfg: SynthConfig) -> SynthDataset:
    rng = np.random.default_rng(cfg.seed)
    seed_u1, seed_u2 = (int(s) for s in rng.integers(0, 2**31 - 1, size=2))
    u1 = haar_orthogonal(cfg.d1, cfg.r_latent, seed_u1)
    u2 = haar_orthogonal(cfg.d2, cfg.r_latent, seed_u2)

    centers = cfg.center_scale * rng.standard_normal((cfg.r_latent, cfg.k_clusters))
    labels = rng.integers(0, cfg.k_clusters, size=cfg.n)
    z = centers[:, labels] + cfg.cluster_std * rng.standard_normal((cfg.r_latent, cfg.n))

    x = _observe(u1, z, cfg.snr, cfg.nonlinearity, rng)
    y = _observe(u2, z, cfg.snr, cfg.nonlinearity, rng)
    batch = PairedBatch(x, y, None, labels)
    return SynthDataset(batch, z, labels, u1, u2, cfg, np.arange(cfg.n))


def split_counts(n: int, fractions) -> tuple[int, int, int]:
    """Sample counts per split; rounding remainder goes to the training split."""
    n_val = int(np.floor(n * fractions[1] + 1e-9))
    n_test = int(np.floor(n * fractions[2] + 1e-9))
    return n - n_val - n_test, n_val, n_test


def split(ds: SynthDataset, seed: Optional[int] = None):
    """Shuffle and cut into (train, val, test) using the config's fractions."""
    cfg = ds.config
    rng = np.random.default_rng(cfg.seed + 1 if seed is None else seed)
    perm = rng.permutation(ds.n)
    n_train, n_val, _ = split_counts(ds.n, cfg.split)
    return (ds.subset(perm[:n_train]),
            ds.subset(perm[n_train:n_train + n_val]),
            ds.subset(perm[n_train + n_val:]))


def many_to_many_augment(ds: SynthDataset, copies: int, seed: int = 0) -> SynthDataset:
    """Give every x several positive y views.

    The result is a square batch of ``n * copies`` samples: x is replicated
    and sample ``a`` is positive for sample ``b`` whenever both come from the
    same original pair, so ``|P_x(i)| = copies``. The first block keeps the
    original y; the other copies are fresh noisy observations of the same
    latent codes.
    """
    if copies < 1:
        raise ValueError("copies must be >= 1")
    if copies == 1:
        return ds
    rng = np.random.default_rng(seed)
    cfg = ds.config
    origin = np.tile(np.arange(ds.n), copies)
    z = ds.latent[:, origin]
    x = ds.batch.x[:, origin]
    y = np.concatenate([ds.batch.y, _observe(ds.u2, z[:, ds.n:], cfg.snr, cfg.nonlinearity, rng)],
                       axis=1)
    mask = origin[:, None] == origin[None, :]
    labels = ds.labels[origin]
    base_origin = ds.origin if ds.origin is not None else np.arange(ds.n)
    return SynthDataset(PairedBatch(x, y, mask, labels), z, labels, ds.u1, ds.u2,
                        cfg, base_origin[origin])
