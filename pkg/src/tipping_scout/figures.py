"""Figure rendering for the CLI report path.

Every figure is written next to the delimited output it illustrates. Output
is deterministic (Agg backend, no timestamps in metadata) so reruns stay
byte-identical.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .crisis import CrisisEstimate, ExponentialFit, LifetimeSamples
from .dynsys import TimeSeries

__all__ = [
    "save_trajectory",
    "save_training_report",
    "save_crisis_histogram",
    "save_survival_curve",
    "save_tune_trace",
]

_SAVE_OPTS = dict(dpi=130, metadata={"Software": None})


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, **_SAVE_OPTS)
    plt.close(fig)


def save_trajectory(series: TimeSeries, path, labels, max_samples=2000) -> None:
    """Coordinates against time, plus a phase portrait of the first two."""
    states = series.states[:max_samples]
    t = np.arange(states.shape[0]) * series.dt
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
    for d in range(states.shape[1]):
        ax1.plot(t, states[:, d], lw=0.7, label=labels[d])
    ax1.set_xlabel("t")
    ax1.legend(loc="upper right", fontsize=8)
    ax1.set_title(f"param = {series.param:g}")
    ax2.plot(states[:, 0], states[:, min(1, states.shape[1] - 1)],
             ",", ms=1, alpha=0.6)
    ax2.set_xlabel(labels[0])
    ax2.set_ylabel(labels[min(1, states.shape[1] - 1)])
    _finish(fig, path)


def save_training_report(session_rmse, path) -> None:
    """One-step training RMSE per session (normalized units)."""
    params = [p for p, _ in session_rmse]
    rmse = [r for _, r in session_rmse]
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.bar(range(len(params)), rmse, color="tab:blue", width=0.6)
    ax.set_xticks(range(len(params)), [f"{p:g}" for p in params])
    ax.set_xlabel("training parameter")
    ax.set_ylabel("one-step RMSE (normalized)")
    ax.set_yscale("log")
    _finish(fig, path)


def save_crisis_histogram(estimate: CrisisEstimate, path,
                          true_value=None) -> None:
    """Distribution of per-member critical-point estimates."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    if estimate.n > 0:
        bins = min(30, max(5, estimate.n // 3))
        ax.hist(estimate.per_member, bins=bins, color="tab:red", alpha=0.75)
    ax.axvline(estimate.mean, color="k", lw=1.5,
               label=f"mean {estimate.mean:.4f}")
    if true_value is not None:
        ax.axvline(true_value, color="tab:green", lw=1.2, ls="--",
                   label=f"reference {true_value:g}")
    ax.set_xlabel("predicted critical parameter")
    ax.set_ylabel("members")
    ax.legend(fontsize=8)
    _finish(fig, path)


def save_survival_curve(samples: LifetimeSamples, table: np.ndarray, path,
                        fit: ExponentialFit = None) -> None:
    """Log-survival of pooled lifetimes with the fitted exponential."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    if table.size:
        ax.plot(table[:, 0], table[:, 1], "o", ms=3.5, color="tab:red",
                label=f"predicted (n={samples.lifetimes.size})")
    if fit is not None and table.size:
        t = np.linspace(table[0, 0], table[-1, 0], 100)
        ax.plot(t, -(t - fit.shift) / fit.tau, "k-", lw=1,
                label=f"exp fit, tau={fit.tau:.3g}")
    ax.set_xlabel("lifetime")
    ax.set_ylabel("log survival")
    ax.legend(fontsize=8)
    _finish(fig, path)


def save_tune_trace(losses, path) -> None:
    """Per-evaluation loss and the running best."""
    losses = np.asarray(losses, dtype=float)
    it = np.arange(len(losses))
    ok = np.isfinite(losses)
    fig, ax = plt.subplots(figsize=(5.5, 3.2))
    ax.plot(it[ok], losses[ok], "o", ms=3, alpha=0.5, label="evaluation")
    best = np.minimum.accumulate(np.where(ok, losses, np.inf))
    ax.plot(it, best, "-", color="tab:red", lw=1.5, label="best seen")
    ax.set_xlabel("evaluation")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    _finish(fig, path)
