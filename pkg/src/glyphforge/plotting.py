"""Figures written next to the CSV/JSON outputs of the CLI."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import LETTERS, NUM_CLASSES  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path):
    # no Software tag, so identical inputs give identical bytes
    fig.savefig(path, dpi=120, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)


def plot_loss_curve(logs, path, title="Training and validation loss"):
    epochs = [e.epoch for e in logs]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        ax.plot(epochs, [e.train_loss for e in logs], marker="o", ms=3, label="train")
        ax.plot(epochs, [e.val_loss for e in logs], marker="s", ms=3, label="validation")
        ax.set_xlabel("epoch")
        ax.set_ylabel("cross-entropy loss")
        ax.set_title(title)
        ax.legend(frameon=False)
        _save(fig, path)


def plot_confusion(report, path, title="Confusion matrix"):
    counts = np.asarray(report.confusion)
    k = counts.shape[0]
    ticks = list(LETTERS) if k == NUM_CLASSES else [str(i) for i in range(k)]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.5, 5.0))
        im = ax.imshow(counts, cmap="Blues", interpolation="nearest")
        ax.set_xticks(range(k), ticks)
        ax.set_yticks(range(k), ticks)
        ax.set_xlabel("predicted")
        ax.set_ylabel("true")
        ax.set_title(f"{title} (accuracy {100 * report.accuracy:.2f}%)")
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
        _save(fig, path)


def plot_ablation(rows, path):
    ok = [r for r in rows if not r.failed]
    names = [r.name for r in ok]
    metrics = ("accuracy", "precision", "recall", "f1")
    x = np.arange(len(ok))
    width = 0.2
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(4.0, 1.4 * len(ok) + 1), 3.2))
        for i, m in enumerate(metrics):
            ax.bar(x + (i - 1.5) * width, [100 * getattr(r.report, m) for r in ok], width, label=m)
        ax.set_xticks(x, names, rotation=20, ha="right")
        ax.set_ylabel("test score (%)")
        ax.set_title("Configuration comparison")
        ax.legend(frameon=False, ncol=4, loc="lower center", bbox_to_anchor=(0.5, 1.08))
        _save(fig, path)
