"""Figure rendering for training runs; everything goes to files.

Uses the non-interactive Agg backend so runs work headless; each figure
lands next to the CSV it visualizes.
"""

from __future__ import annotations

from typing import Sequence, Tuple

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .metrics import RocCurve


def render_roc_figure(path, labeled_curves: Sequence[Tuple[str, RocCurve]],
                      title: str = "ROC") -> None:
    """One axes with a staircase per (label, curve) pair plus the chance line."""
    fig, ax = plt.subplots(figsize=(5.5, 5))
    for label, curve in labeled_curves:
        ax.plot(curve.fpr(), curve.tpr(), drawstyle="steps-post",
                label=f"{label} (AUC={curve.auc:.3f})")
    ax.plot([0, 1], [0, 1], linestyle=":", color="gray", linewidth=1)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    ax.set_title(title)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_history_figure(path, labeled_histories, title: str = "training history") -> None:
    """Two panels: loss and accuracy per epoch, train and validation."""
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(10, 4))
    for label, history in labeled_histories:
        epochs = [row.epoch for row in history]
        ax_loss.plot(epochs, [row.train_loss for row in history], label=f"{label} train")
        ax_loss.plot(epochs, [row.val_loss for row in history], linestyle="--",
                     label=f"{label} val")
        ax_acc.plot(epochs, [row.train_acc for row in history], label=f"{label} train")
        ax_acc.plot(epochs, [row.val_acc for row in history], linestyle="--",
                    label=f"{label} val")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("accuracy")
    ax_acc.set_ylim(0, 1.05)
    ax_loss.legend(fontsize=7)
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_compare_figure(path, rows: Sequence[Tuple[str, float, float]],
                          title: str = "variant comparison") -> None:
    """Grouped bars of mean accuracy and mean AUC per variant."""
    variants = [r[0] for r in rows]
    acc = [r[1] for r in rows]
    auc = [r[2] for r in rows]
    positions = range(len(variants))
    width = 0.38
    fig, ax = plt.subplots(figsize=(1.6 * len(variants) + 2, 4))
    ax.bar([p - width / 2 for p in positions], acc, width, label="mean accuracy")
    ax.bar([p + width / 2 for p in positions], auc, width, label="mean AUC")
    ax.set_xticks(list(positions))
    ax.set_xticklabels(variants, rotation=20, ha="right", fontsize=8)
    ax.set_ylim(0, 1.05)
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
