"""PNG figures for fit and eval reports (headless matplotlib)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def convergence_figure(diag, path) -> Path:
    """Relative operator change (log scale) and objective per iteration."""
    it = np.arange(1, diag.iterations + 1)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    changes = np.asarray(diag.rel_changes, dtype=float)
    finite = np.isfinite(changes)
    ax1.semilogy(it[finite], changes[finite], "o-")
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("relative change of operator")
    ax2.plot(it, diag.objectives, "o-", color="C1")
    ax2.set_xlabel("iteration")
    ax2.set_ylabel("objective")
    return _save(fig, path)


def spectrum_figure(diag, path) -> Path:
    """Singular values of the spectral step at the first and last iteration."""
    fig, ax = plt.subplots(figsize=(4.8, 3.4))
    first, last = diag.singular_values[0], diag.singular_values[-1]
    ax.plot(np.arange(1, first.size + 1), first, "o--", label="iteration 1")
    ax.plot(np.arange(1, last.size + 1), last, "o-", label=f"iteration {diag.iterations}")
    ax.set_xlabel("index")
    ax.set_ylabel("singular value")
    ax.legend()
    return _save(fig, path)


def weights_figure(snapshots, path, max_side: int = 60) -> Path:
    """Heatmaps of the weight matrix across iterations (top-left block)."""
    picks = snapshots if len(snapshots) <= 4 else [snapshots[i] for i in
                                                   np.linspace(0, len(snapshots) - 1, 4).astype(int)]
    fig, axes = plt.subplots(1, len(picks), figsize=(3.2 * len(picks), 3.2), squeeze=False)
    for k, (ax, w) in enumerate(zip(axes[0], picks)):
        block = np.asarray(w)[:max_side, :max_side]
        lim = np.max(np.abs(block)) or 1.0
        ax.imshow(block, cmap="RdBu_r", vmin=-lim, vmax=lim)
        ax.set_title(f"snapshot {k + 1}")
        ax.set_xticks([])
        ax.set_yticks([])
    return _save(fig, path)


def recall_figure(report, path) -> Path:
    fig, ax = plt.subplots(figsize=(4.8, 3.4))
    for label, curve in (("x to y", report.r_at_k_i2t), ("y to x", report.r_at_k_t2i)):
        ks = sorted(curve)
        ax.plot(ks, [curve[k] for k in ks], "o-", label=label)
    ax.set_xlabel("K")
    ax.set_ylabel("recall@K")
    ax.set_ylim(0, 1.02)
    ax.legend()
    return _save(fig, path)
