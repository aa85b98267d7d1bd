"""Report figures written next to the CSV outputs (Agg backend, no display needed)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

GREEN = "#1b7837"
PURPLE = "#762a83"
GREY = "#8c8c8c"

# keep saved files stable across runs
_SAVE_KW = {"dpi": 120, "metadata": {"Software": None}}


def plot_history(history, path) -> None:
    """Train/validation loss (log scale) with the learning rate on a twin axis."""
    epochs = history.column("epoch")
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    ax.plot(epochs, history.column("train_loss"), color=GREY, label="train")
    ax.plot(epochs, history.column("val_loss"), color=GREEN, label="validation")
    if history.best_epoch:
        ax.axvline(history.best_epoch, color=PURPLE, ls=":", lw=1, label=f"best ({history.best_epoch})")
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    lr_ax = ax.twinx()
    lr_ax.step(epochs, history.column("lr"), where="post", color="k", lw=0.8, alpha=0.5)
    lr_ax.set_yscale("log")
    lr_ax.set_ylabel("learning rate")
    ax.legend(loc="upper right", frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def plot_rtfilter(calib, residuals, report, path) -> None:
    """Validation residual histogram with the bounds, and filtered fraction per analyte."""
    fig, (top, bottom) = plt.subplots(2, 1, figsize=(6.0, 5.5))
    if residuals is not None and len(residuals):
        top.hist(np.asarray(residuals), bins=30, color=GREY, edgecolor="white")
    for b in (calib.lower, calib.upper):
        top.axvline(b, color=PURPLE, ls="--", lw=1)
    top.set_xlabel("RT residual, experimental - predicted (min)")
    top.set_ylabel("count")
    top.set_title(f"bounds [{calib.lower:.3f}, {calib.upper:.3f}], z = {calib.z:g}", fontsize=9)

    ids = [a.analyte_id for a in report.analytes]
    x = np.arange(len(ids))
    kept = [a.kept for a in report.analytes]
    filt = [a.filtered for a in report.analytes]
    bottom.bar(x, kept, color=GREEN, label="kept")
    bottom.bar(x, filt, bottom=kept, color=GREY, label="filtered out")
    for i, a in enumerate(report.analytes):
        if a.false_negative:
            bottom.bar(i, a.total, fill=False, edgecolor="red", lw=1.5)
    bottom.set_xticks(x)
    bottom.set_xticklabels(ids, rotation=90, fontsize=7)
    bottom.set_ylabel("candidates")
    bottom.set_title(f"filtered overall: {report.fraction_filtered:.1%}", fontsize=9)
    bottom.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
