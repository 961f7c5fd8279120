"""Retrieval metrics and the finite-difference gradient check.

Similarity matrices are ``m x p`` with rows as x-queries and columns as
y-candidates. Ties are always broken towards the lowest index.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .loss import LossFamily, check_mask, loss_grad_wrt_similarity, loss_value
from .simweights import weights_generalized

GRAD_TOL = 1e-4
GRAD_ABS_FLOOR = 1e-8
PARAM_TOL = 1e-3
KINK_GAP = 1e-3


def _mask_for(sim: np.ndarray, mask) -> np.ndarray:
    if mask is None:
        if sim.shape[0] != sim.shape[1]:
            raise ValueError("a non-square similarity needs an explicit mask")
        return np.eye(sim.shape[0], dtype=bool)
    m = np.asarray(mask, dtype=bool)
    if m.shape != sim.shape:
        raise ValueError(f"mask shape {m.shape} does not match similarity {sim.shape}")
    return m


def matching_accuracy(sim, mask=None) -> tuple[float, float, float]:
    """Fraction of rows (i2t) and columns (t2i) whose argmax is a positive."""
    sim = np.asarray(sim, dtype=np.float64)
    m = _mask_for(sim, mask)
    rows = np.arange(sim.shape[0])
    cols = np.arange(sim.shape[1])
    i2t = float(np.mean(m[rows, np.argmax(sim, axis=1)]))
    t2i = float(np.mean(m[np.argmax(sim, axis=0), cols]))
    return i2t, t2i, 0.5 * (i2t + t2i)


def _top_k_hits(sim: np.ndarray, m: np.ndarray, ks) -> dict:
    # stable sort on -sim keeps the lowest index first among ties
    order = np.argsort(-sim, axis=1, kind="stable")
    hits = np.take_along_axis(m, order, axis=1)
    first = np.where(hits.any(axis=1), hits.argmax(axis=1), sim.shape[1])
    return {int(k): float(np.mean(first < k)) for k in ks}


def recall_at_k(sim, mask=None, ks: Sequence[int] = (1, 5, 10)) -> tuple[dict, dict]:
    """Recall@K in both directions: a query hits if any positive is in its top K."""
    sim = np.asarray(sim, dtype=np.float64)
    m = _mask_for(sim, mask)
    ks = [int(k) for k in ks]
    limit = min(sim.shape)
    for k in ks:
        if k < 1 or k > limit:
            raise ValueError(f"K={k} outside 1..{limit} (candidate count)")
    return _top_k_hits(sim, m, ks), _top_k_hits(sim.T, m.T, ks)


def confusion_counts(sim, labels_x, labels_y) -> np.ndarray:
    """Counts of (query class, class of retrieved top-1 candidate)."""
    sim = np.asarray(sim, dtype=np.float64)
    lx = np.asarray(labels_x)
    ly = np.asarray(labels_y)
    classes = np.unique(np.concatenate([lx, ly]))
    ix = np.searchsorted(classes, lx)
    iy = np.searchsorted(classes, ly[np.argmax(sim, axis=1)])
    out = np.zeros((classes.size, classes.size), dtype=np.int64)
    np.add.at(out, (ix, iy), 1)
    return out


@dataclass
class RetrievalReport:
    r_at_k_i2t: dict
    r_at_k_t2i: dict
    matching_accuracy_i2t: float
    matching_accuracy_t2i: float
    matching_accuracy_avg: float
    wall_time_seconds: float = 0.0
    iterations: int = 0
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_similarity(cls, sim, mask=None, ks=(1, 5, 10), wall_time_seconds=0.0,
                        iterations=0, extra=None) -> "RetrievalReport":
        i2t, t2i, avg = matching_accuracy(sim, mask)
        r_i2t, r_t2i = recall_at_k(sim, mask, ks)
        return cls(r_i2t, r_t2i, i2t, t2i, avg, float(wall_time_seconds), int(iterations),
                   dict(extra or {}))

    def flat(self) -> dict:
        row = {
            "matching_accuracy_i2t": self.matching_accuracy_i2t,
            "matching_accuracy_t2i": self.matching_accuracy_t2i,
            "matching_accuracy_avg": self.matching_accuracy_avg,
        }
        for k, v in sorted(self.r_at_k_i2t.items()):
            row[f"r_at_{k}_i2t"] = v
        for k, v in sorted(self.r_at_k_t2i.items()):
            row[f"r_at_{k}_t2i"] = v
        row["wall_time_seconds"] = self.wall_time_seconds
        row["iterations"] = self.iterations
        return row

    def to_json(self) -> str:
        doc = self.flat()
        doc.update(self.extra)
        return json.dumps(doc, indent=2, sort_keys=False, default=_json_default)

    def csv_row(self, header: bool = True) -> str:
        row = self.flat()
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(row), lineterminator="\n")
        if header:
            writer.writeheader()
        writer.writerow(row)
        return buf.getvalue()


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


# gradient checks


def _rel_dev(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.abs(b), GRAD_ABS_FLOOR / GRAD_TOL)
    return float(np.max(np.abs(a - b) / denom))


def random_mask(n: int, rng: np.random.Generator, extra: float = 0.25) -> np.ndarray:
    """Diagonal plus random extra positives (so no row or column is empty)."""
    m = rng.random((n, n)) < extra
    np.fill_diagonal(m, True)
    return m


def _hinge_clear(family: LossFamily, s: np.ndarray, mask: np.ndarray) -> bool:
    """True when no hinge argument sits within KINK_GAP of the kink."""
    for sm, mm in ((s, mask), (s.T, mask.T)):
        pi, pk = np.nonzero(mm)
        args = sm[pi, :] - family.nu * sm[pi, pk][:, None] + family.margin
        if np.any(np.abs(args[~mm[pi, :]]) <= KINK_GAP):
            return False
        if family.epsilon_diag and np.any(
                np.abs((1.0 - family.nu) * sm[pi, pk] + family.margin) <= KINK_GAP):
            return False
    return True


def sample_instance(family: LossFamily, n: int, rng: np.random.Generator,
                    many_to_many: bool = False, max_tries: int = 1000):
    """Random similarity in [-1, 1] and mask; hinge losses are resampled off their kinks.

    Returns ``(s, mask, tries)``.
    """
    for tries in range(1, max_tries + 1):
        s = rng.uniform(-1.0, 1.0, (n, n))
        mask = random_mask(n, rng) if many_to_many else np.eye(n, dtype=bool)
        if family.differentiable or _hinge_clear(family, s, mask):
            return s, mask, tries
    raise RuntimeError(f"no kink-free instance found in {max_tries} draws")


def similarity_gradcheck(family: LossFamily, s, mask=None, h: float = 1e-5) -> float:
    """Max relative deviation between the weight matrix and ``-dL/ds`` by finite differences."""
    w = weights_generalized(family, s, mask)
    fd = -loss_grad_wrt_similarity(family, s, mask, h)
    return _rel_dev(w, fd)


def _unnormalised_loss(family, f1, f2, x, y, mask) -> float:
    prod = f1.T @ f2
    s = (f1 @ x).T @ (f2 @ y)
    return loss_value(family, s, mask) + 0.5 * family.rho * float(np.sum(prod * prod))


def parameter_gradcheck(family: LossFamily, d1: int = 5, d2: int = 4, n: int = 5, r: int = 3,
                        seed: int = 0, h: float = 1e-6, many_to_many: bool = False) -> float:
    """Encoder-space check on a linear model with unnormalised embeddings.

    With the weights frozen at the current point, the loss gradient must equal
    ``-d tr(F1 C F2^T)/dF + dR/dF`` where ``C = X W Y^T`` and
    ``R = rho/2 ||F1^T F2||^2``. Returns the max relative deviation over F1 and F2,
    measured against the largest gradient entry.
    """
    rng = np.random.default_rng(seed)
    for _ in range(1000):
        x = rng.normal(size=(d1, n)) / np.sqrt(d1)
        y = rng.normal(size=(d2, n)) / np.sqrt(d2)
        f1 = rng.normal(size=(r, d1))
        f2 = rng.normal(size=(r, d2))
        mask = random_mask(n, rng) if many_to_many else np.eye(n, dtype=bool)
        s = (f1 @ x).T @ (f2 @ y)
        if family.differentiable or _hinge_clear(family, s, mask):
            break
    w = weights_generalized(family, s, mask)
    c = x @ w @ y.T
    prod = f1.T @ f2
    g1 = -f2 @ c.T + family.rho * f2 @ prod.T
    g2 = -f1 @ c + family.rho * f1 @ prod

    worst = 0.0
    for target, analytic in ((f1, g1), (f2, g2)):
        fd = np.empty_like(target)
        for idx in np.ndindex(*target.shape):
            orig = target[idx]
            target[idx] = orig + h
            up = _unnormalised_loss(family, f1, f2, x, y, mask)
            target[idx] = orig - h
            down = _unnormalised_loss(family, f1, f2, x, y, mask)
            target[idx] = orig
            fd[idx] = (up - down) / (2.0 * h)
        scale = max(np.max(np.abs(fd)), GRAD_ABS_FLOOR)
        worst = max(worst, float(np.max(np.abs(analytic - fd)) / scale))
    return worst


@dataclass
class GradcheckReport:
    loss: str
    n: int
    seed: int
    similarity_deviation: float
    parameter_deviation: float
    resamples: int
    similarity_pass: bool
    parameter_pass: bool

    @property
    def passed(self) -> bool:
        return self.similarity_pass and self.parameter_pass

    def lines(self) -> list[str]:
        out = [
            f"loss={self.loss} n={self.n} seed={self.seed}",
            f"similarity-space max rel deviation: {self.similarity_deviation:.3e} "
            f"(tol {GRAD_TOL:g}) {'PASS' if self.similarity_pass else 'FAIL'}",
            f"parameter-space max rel deviation: {self.parameter_deviation:.3e} "
            f"(tol {PARAM_TOL:g}) {'PASS' if self.parameter_pass else 'FAIL'}",
        ]
        if self.resamples > 1:
            out.append(f"instance redrawn {self.resamples - 1} time(s) to keep every hinge "
                       f"argument at least {KINK_GAP:g} away from its kink")
        out.append("PASS" if self.passed else "FAIL")
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def gradcheck(family: LossFamily, n: int = 5, seed: int = 0, name: str = "",
              many_to_many: bool = False) -> GradcheckReport:
    if not 2 <= n <= 8:
        raise ValueError(f"gradcheck needs 2 <= n <= 8, got {n}")
    rng = np.random.default_rng(seed)
    s, mask, tries = sample_instance(family, n, rng, many_to_many)
    sim_dev = similarity_gradcheck(family, s, mask)
    par_dev = parameter_gradcheck(family, n=min(n, 5), seed=seed, many_to_many=many_to_many)
    return GradcheckReport(name or family.phi + "/" + family.psi, n, seed, sim_dev, par_dev,
                           tries, sim_dev < GRAD_TOL, par_dev < PARAM_TOL)
