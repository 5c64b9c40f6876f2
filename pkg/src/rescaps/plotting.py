"""Figures written next to the CSV reports."""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import RocPoint  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 4.0),
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
    "legend.fontsize": 8,
    "savefig.dpi": 120,
}


def plot_roc(curves: dict[str, Sequence[RocPoint]], aucs: dict[str, float | None], path) -> None:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot([0, 1], [0, 1], ls="--", lw=0.8, color="0.6")
        for scope, curve in curves.items():
            a = aucs.get(scope)
            label = f"{scope} (AUC {a:.3f})" if a is not None else scope
            ax.plot([p.fpr for p in curve], [p.tpr for p in curve], lw=1.4, label=label)
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.02)
        ax.set_xlabel("False positive rate")
        ax.set_ylabel("True positive rate")
        if curves:
            ax.legend(loc="lower right")
        else:
            ax.text(0.5, 0.5, "ROC undefined: single-class truths", ha="center", va="center")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def plot_training(history: list[dict], path) -> None:
    """history rows: fold, epoch, split, loss, acc."""
    folds = sorted({r["fold"] for r in history})
    with plt.rc_context(STYLE):
        fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(9.0, 3.6))
        for f in folds:
            for split, ls in (("train", "-"), ("val", "--")):
                rows = [r for r in history if r["fold"] == f and r["split"] == split]
                if not rows:
                    continue
                ep = [r["epoch"] for r in rows]
                ax_loss.plot(ep, [r["loss"] for r in rows], ls=ls, marker=".",
                             label=f"fold {f} {split}")
                acc = [r["acc"] for r in rows]
                ax_acc.plot(ep, acc, ls=ls, marker=".", label=f"fold {f} {split}")
        ax_loss.set_xlabel("epoch")
        ax_loss.set_ylabel("margin loss")
        ax_acc.set_xlabel("epoch")
        ax_acc.set_ylabel("accuracy")
        ax_acc.set_ylim(-0.02, 1.02)
        ax_acc.legend(ncol=2, loc="lower right")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
