"""Figure rendering for the CLI report paths.

Every CLI command that emits a CSV can also render a matplotlib figure
next to it; these helpers do the drawing.  The library analysis code
never imports this module, so headless runs that only want CSVs pay no
matplotlib cost.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def save_rd_figure(points, path, title="Rate-distortion"):
    """Mean-over-seeds rate/MSE curve per variant (log-scale distortion)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    variants = sorted({p.variant for p in points})
    for variant in variants:
        rows = sorted((p.rate_bits, p.mse) for p in points
                      if p.variant == variant and p.seed == -1)
        if not rows:
            rows = sorted((p.rate_bits, p.mse) for p in points
                          if p.variant == variant)
        ax.plot([r for r, _ in rows], [m for _, m in rows],
                marker="o", label=variant)
    ax.set_xlabel("rate (bits)")
    ax.set_ylabel("test MSE")
    ax.set_yscale("log")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_bounds_figure(rows, path):
    """Analytic rate-distortion curves with and without side information."""
    fig, ax = plt.subplots(figsize=(6, 4))
    d = [r[0] for r in rows]
    ax.plot(d, [r[1] for r in rows], marker="o", label="no SI")
    ax.plot(d, [r[2] for r in rows], marker="s", label="with SI")
    ax.set_xlabel("distortion (MSE)")
    ax.set_ylabel("rate (bits/sample)")
    ax.set_xscale("log")
    ax.set_title("Analytic Gaussian bounds")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_loss_figure(logrows, path, title="Training"):
    """Per-epoch train loss and validation MSE."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot([r.epoch for r in logrows], [r.train_loss for r in logrows],
            label="train loss")
    ax.plot([r.epoch for r in logrows], [r.valid_mse for r in logrows],
            label="valid MSE")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_grad_figure(logs_by_seed, path, title="Compressed training"):
    """Test accuracy vs round and vs cumulative bits, mean over seeds."""
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    rounds = [r.round for r in logs_by_seed[0]]
    acc = [[r.test_accuracy for r in logs] for logs in logs_by_seed]
    mean_acc = [sum(col) / len(col) for col in zip(*acc)]
    axes[0].plot(rounds, mean_acc)
    axes[0].set_xlabel("round")
    axes[0].set_ylabel("test accuracy")
    axes[0].grid(True, alpha=0.3)
    cum_bits = []
    total = 0
    for r in logs_by_seed[0]:
        total += r.bits
        cum_bits.append(total)
    axes[1].plot(cum_bits, mean_acc)
    axes[1].set_xlabel("cumulative bits sent by worker 2")
    axes[1].set_ylabel("test accuracy")
    axes[1].set_xscale("log")
    axes[1].grid(True, alpha=0.3)
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_diversity_figure(rows, path):
    """Bar chart of decoder-output diversity per model."""
    fig, ax = plt.subplots(figsize=(6, 4))
    labels = [r[0] for r in rows]
    values = [r[1] for r in rows]
    ax.bar(range(len(rows)), values)
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, rotation=20, ha="right")
    ax.set_ylabel("mean pairwise l2 distance")
    ax.set_title("Decoding diversity under varying side information")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
