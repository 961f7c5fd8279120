"""On-disk formats: embeddings, pair masks, fitted models and run configs.

Embedding file (all integers little-endian)::

    b"UEMB" | u16 version=1 | u32 rows | u32 cols | rows*cols float32, row-major

Rows are samples on disk. :func:`read_embeddings` returns the transpose
(features x samples, float64), which is the in-memory convention everywhere
else in the package.

Model container::

    b"UMDL" | u16 version=1 | u16 kind (1 linear, 2 kernel, 3 ensemble) | u32 block count
    | per block: u64 length + an embedding-file image of the matrix
    | u32 length + UTF-8 JSON trailer (kernel specs, rho, block names)

Matrices inside a model are stored as they are, without transposition. An
ensemble concatenates its members' blocks; the trailer lists each member's
own trailer plus the fusion weights.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .kernels import KernelSpec
from .linalg import SpectralConfig
from .loss import LossFamily, from_config
from .solver import FixedPointConfig, KernelModel, LinearModel

EMB_MAGIC = b"UEMB"
EMB_VERSION = 1
_EMB_HEADER = struct.Struct("<4sHII")

MODEL_MAGIC = b"UMDL"
MODEL_VERSION = 1
_MODEL_HEADER = struct.Struct("<4sHHI")
_KIND_CODES = {"linear": 1, "kernel": 2, "ensemble": 3}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}

PathLike = Union[str, Path]


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class MagicError(DataError):
    pass


class TruncatedError(DataError):
    pass


class NonFiniteError(DataError):
    pass


class VersionError(DataError):
    pass


class KindError(DataError):
    pass


class MaskError(DataError):
    pass


class ConfigError(DataError):
    pass


# embeddings


def encode_matrix(m) -> bytes:
    m = np.asarray(m)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    flat = m.astype("<f4", copy=False)
    bad = np.flatnonzero(~np.isfinite(flat.ravel()))
    if bad.size:
        raise NonFiniteError(f"non-finite value at entry {int(bad[0])} (row-major)")
    return _EMB_HEADER.pack(EMB_MAGIC, EMB_VERSION, m.shape[0], m.shape[1]) + flat.tobytes(order="C")


def decode_matrix(buf: bytes, source: str = "<buffer>") -> np.ndarray:
    if len(buf) < _EMB_HEADER.size:
        raise TruncatedError(f"{source}: header needs {_EMB_HEADER.size} bytes, got {len(buf)}")
    magic, version, rows, cols = _EMB_HEADER.unpack_from(buf, 0)
    if magic != EMB_MAGIC:
        raise MagicError(f"{source}: bad magic {magic!r} at byte 0, expected {EMB_MAGIC!r}")
    if version != EMB_VERSION:
        raise VersionError(f"{source}: embedding format version {version}, this reader handles {EMB_VERSION}")
    expected = _EMB_HEADER.size + rows * cols * 4
    if len(buf) != expected:
        kind = "truncated" if len(buf) < expected else "oversized"
        raise TruncatedError(f"{source}: {kind} payload, expected {expected} bytes, got {len(buf)}")
    data = np.frombuffer(buf, dtype="<f4", count=rows * cols, offset=_EMB_HEADER.size)
    bad = np.flatnonzero(~np.isfinite(data))
    if bad.size:
        i = int(bad[0])
        raise NonFiniteError(f"{source}: non-finite value at entry {i} (row {i // max(cols, 1)}, "
                             f"col {i % max(cols, 1)}), byte offset {_EMB_HEADER.size + 4 * i}")
    return data.reshape(rows, cols).astype(np.float64)


def write_embeddings(path: PathLike, m) -> None:
    """Write a features x samples matrix as a samples-major embedding file."""
    m = np.asarray(m)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    Path(path).write_bytes(encode_matrix(m.T))


def read_embeddings(path: PathLike) -> np.ndarray:
    """Read an embedding file and return it as features x samples (float64)."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such embedding file")
    return decode_matrix(path.read_bytes(), str(path)).T.copy()


# pair masks


def read_pair_mask(path: Optional[PathLike], n_x: int, n_y: int) -> np.ndarray:
    """Dense boolean mask from an ``i,j`` CSV; a missing file means one-to-one."""
    if path is None or not Path(path).exists():
        if n_x != n_y:
            raise MaskError(f"no pair mask given but x has {n_x} samples and y has {n_y}")
        return np.eye(n_x, dtype=bool)
    mask = np.zeros((n_x, n_y), dtype=bool)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["i", "j"]:
            raise MaskError(f"{path}: line 1: expected header 'i,j', got {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise MaskError(f"{path}: line {lineno}: expected 2 fields, got {len(row)}")
            try:
                i, j = int(row[0]), int(row[1])
            except ValueError:
                raise MaskError(f"{path}: line {lineno}: non-integer index in {row!r}") from None
            if not (0 <= i < n_x and 0 <= j < n_y):
                raise MaskError(f"{path}: line {lineno}: pair ({i}, {j}) out of range for "
                                f"{n_x} x {n_y} samples")
            mask[i, j] = True
    empty_rows = np.flatnonzero(~mask.any(axis=1))
    if empty_rows.size:
        raise MaskError(f"{path}: x sample {int(empty_rows[0])} has no positive partner")
    empty_cols = np.flatnonzero(~mask.any(axis=0))
    if empty_cols.size:
        raise MaskError(f"{path}: y sample {int(empty_cols[0])} has no positive partner")
    return mask


def write_pair_mask(path: PathLike, mask) -> None:
    mask = np.asarray(mask, dtype=bool)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["i", "j"])
        for i, j in zip(*np.nonzero(mask)):
            writer.writerow([int(i), int(j)])


# models


def _model_blocks(model):
    if isinstance(model, LinearModel):
        trailer = {"rho": model.rho}
        return "linear", [("f1", model.f1), ("f2", model.f2)], trailer
    if isinstance(model, KernelModel):
        trailer = {"rho": model.rho, "normalize": model.normalize,
                   "spec_x": model.spec_x.to_dict(), "spec_y": model.spec_y.to_dict()}
        blocks = [("a", model.a), ("b", model.b), ("ref_x", model.ref_x), ("ref_y", model.ref_y)]
        return "kernel", blocks, trailer
    from .aggregate import BatchEnsemble
    if isinstance(model, BatchEnsemble):
        members, blocks = [], []
        for m in model.models:
            kind, sub, trailer = _model_blocks(m)
            trailer.update(kind=kind, blocks=[name for name, _ in sub])
            members.append(trailer)
            blocks.extend(sub)
        trailer = {"members": members, "weights": model.weights.tolist(),
                   "strategy": model.strategy.kind, "softmax_temp": model.strategy.softmax_temp}
        return "ensemble", blocks, trailer
    raise TypeError(f"cannot save object of type {type(model).__name__}")


def save_model(path: PathLike, model) -> None:
    kind, blocks, trailer = _model_blocks(model)
    trailer["blocks"] = [name for name, _ in blocks]
    parts = [_MODEL_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, _KIND_CODES[kind], len(blocks))]
    for _, m in blocks:
        img = encode_matrix(m)
        parts.append(struct.pack("<Q", len(img)))
        parts.append(img)
    meta = json.dumps(trailer, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(meta)))
    parts.append(meta)
    Path(path).write_bytes(b"".join(parts))


def load_model(path: PathLike, expect_kind: Optional[str] = None):
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such model file")
    buf = path.read_bytes()
    src = str(path)
    if len(buf) < _MODEL_HEADER.size:
        raise TruncatedError(f"{src}: model header needs {_MODEL_HEADER.size} bytes, got {len(buf)}")
    magic, version, code, count = _MODEL_HEADER.unpack_from(buf, 0)
    if magic != MODEL_MAGIC:
        raise MagicError(f"{src}: bad magic {magic!r} at byte 0, expected {MODEL_MAGIC!r}")
    if version != MODEL_VERSION:
        raise VersionError(f"{src}: model format version {version}, this reader handles {MODEL_VERSION}")
    kind = _KIND_NAMES.get(code)
    if kind is None:
        raise KindError(f"{src}: unknown model kind code {code}")
    if expect_kind is not None and kind != expect_kind:
        raise KindError(f"{src}: holds a {kind} model, expected {expect_kind}")

    off = _MODEL_HEADER.size
    mats = []
    for k in range(count):
        if off + 8 > len(buf):
            raise TruncatedError(f"{src}: block {k} length field cut off at byte {off}")
        (length,) = struct.unpack_from("<Q", buf, off)
        off += 8
        if off + length > len(buf):
            raise TruncatedError(f"{src}: block {k} expected {length} bytes, got {len(buf) - off}")
        mats.append(decode_matrix(buf[off:off + length], f"{src} block {k}"))
        off += length
    if off + 4 > len(buf):
        raise TruncatedError(f"{src}: trailer length cut off at byte {off}")
    (tlen,) = struct.unpack_from("<I", buf, off)
    off += 4
    if off + tlen != len(buf):
        raise TruncatedError(f"{src}: trailer expected {tlen} bytes, got {len(buf) - off}")
    meta = json.loads(buf[off:].decode("utf-8"))
    if kind != "ensemble":
        return _build_model(kind, meta, mats)
    from .aggregate import BatchEnsemble, FusionStrategy
    models, pos = [], 0
    for member in meta["members"]:
        k = len(member["blocks"])
        models.append(_build_model(member["kind"], member, mats[pos:pos + k]))
        pos += k
    strategy = FusionStrategy(meta["strategy"], float(meta["softmax_temp"]))
    return BatchEnsemble(models, np.asarray(meta["weights"]), strategy)


def _build_model(kind: str, meta: dict, mats: list):
    named = dict(zip(meta["blocks"], mats))
    if kind == "linear":
        return LinearModel(named["f1"], named["f2"], float(meta["rho"]))
    if kind == "kernel":
        return KernelModel(named["a"], named["b"], named["ref_x"], named["ref_y"],
                           KernelSpec.from_dict(meta["spec_x"]), KernelSpec.from_dict(meta["spec_y"]),
                           float(meta["rho"]), bool(meta["normalize"]))
    raise KindError(f"unknown member kind {kind!r}")


# run configuration

_TOP_KEYS = {"loss", "kernel_x", "kernel_y", "rank", "rho", "fixed_point", "spectral",
             "aggregation", "seed"}
_FP_KEYS = {"max_iters", "rel_tol", "weight_update"}
_SPECTRAL_KEYS = {"tikhonov_lambda", "use_randomized", "oversampling", "power_iters",
                  "pinv_threshold"}
_AGG_KEYS = {"batch_size", "strategy", "scheme", "softmax_temp"}


def _reject_unknown(section: str, d: dict, allowed: set) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"config section {section!r} must be an object")
    unknown = sorted(set(d) - allowed)
    if unknown:
        where = f" in {section!r}" if section else ""
        raise ConfigError(f"unknown config key {unknown[0]!r}{where}")


@dataclass
class RunConfig:
    loss: LossFamily = field(default_factory=LossFamily)
    kernel_x: KernelSpec = field(default_factory=KernelSpec)
    kernel_y: KernelSpec = field(default_factory=KernelSpec)
    rank: int = 10
    fixed_point: FixedPointConfig = field(default_factory=FixedPointConfig)
    # batch_size None disables mini-batch aggregation
    batch_size: Optional[int] = None
    strategy: str = "accuracy"
    scheme: str = "random"
    softmax_temp: float = 1.0
    seed: int = 0
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        _reject_unknown("", d, _TOP_KEYS)
        try:
            loss = from_config(d.get("loss", "clip"))
            if "rho" in d:
                loss = replace(loss, rho=float(d["rho"]))
            fp = d.get("fixed_point", {})
            _reject_unknown("fixed_point", fp, _FP_KEYS)
            sp = d.get("spectral", {})
            _reject_unknown("spectral", sp, _SPECTRAL_KEYS)
            agg = d.get("aggregation", {})
            _reject_unknown("aggregation", agg, _AGG_KEYS)
            rank = int(d.get("rank", 10))
            spectral = SpectralConfig(
                rank=rank,
                tikhonov_lambda=sp.get("tikhonov_lambda"),
                pinv_threshold=float(sp.get("pinv_threshold", 1e-10)),
                rsvd_oversampling=int(sp.get("oversampling", 10)),
                rsvd_power_iters=int(sp.get("power_iters", 2)),
                use_randomized=bool(sp.get("use_randomized", False)),
            )
            fixed = FixedPointConfig(int(fp.get("max_iters", 20)), float(fp.get("rel_tol", 1e-4)),
                                     spectral, fp.get("weight_update", "replace"))
            cfg = cls(
                loss=loss,
                kernel_x=KernelSpec.from_dict(d.get("kernel_x", {})),
                kernel_y=KernelSpec.from_dict(d.get("kernel_y", {})),
                rank=rank,
                fixed_point=fixed,
                batch_size=None if agg.get("batch_size") is None else int(agg["batch_size"]),
                strategy=str(agg.get("strategy", "accuracy")),
                scheme=str(agg.get("scheme", "random")),
                softmax_temp=float(agg.get("softmax_temp", 1.0)),
                seed=int(d.get("seed", 0)),
                raw=dict(d),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc
        if cfg.rank < 1:
            raise ConfigError("rank must be >= 1")
        if cfg.strategy not in ("accuracy", "softmax", "vote"):
            raise ConfigError(f"unknown aggregation strategy {cfg.strategy!r}")
        if cfg.scheme not in ("random", "balanced"):
            raise ConfigError(f"unknown aggregation scheme {cfg.scheme!r}")
        if cfg.batch_size is not None and cfg.batch_size < 2:
            raise ConfigError("aggregation batch_size must be >= 2")
        return cfg

    def resolved(self) -> dict:
        sp = self.fixed_point.spectral
        return {
            "loss": self.loss.to_dict(),
            "kernel_x": self.kernel_x.to_dict(),
            "kernel_y": self.kernel_y.to_dict(),
            "rank": self.rank,
            "rho": self.loss.rho,
            "fixed_point": {"max_iters": self.fixed_point.max_iters,
                            "rel_tol": self.fixed_point.rel_tol,
                            "weight_update": self.fixed_point.weight_update},
            "spectral": {"tikhonov_lambda": sp.tikhonov_lambda,
                         "use_randomized": sp.use_randomized,
                         "oversampling": sp.rsvd_oversampling,
                         "power_iters": sp.rsvd_power_iters,
                         "pinv_threshold": sp.pinv_threshold},
            "aggregation": {"batch_size": self.batch_size, "strategy": self.strategy,
                            "scheme": self.scheme, "softmax_temp": self.softmax_temp},
            "seed": self.seed,
        }


def read_run_config(path: Optional[PathLike]) -> RunConfig:
    if path is None:
        return RunConfig.from_dict({})
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such config file") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return RunConfig.from_dict(doc)
