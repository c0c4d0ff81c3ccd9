"""Report figures written next to the CLI's tabular output."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .pose_eval import IOU_THRESHOLDS, POSE_THRESHOLDS, threshold_key  # noqa: E402

# fixed metadata keeps figure bytes reproducible
_SAVE = {"dpi": 100, "metadata": {"Software": None}}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return path


def depth_figure(pred, gt, region, path, title=None):
    """Predicted depth, ground truth and absolute error over ``region``."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    sel = np.asarray(region, dtype=bool) & (gt > 0)
    vals = gt[gt > 0]
    lo, hi = (float(vals.min()), float(vals.max())) if vals.size else (0.0, 1.0)
    err = np.where(sel & (pred > 0), np.abs(pred - gt), np.nan)
    missing = sel & ~(pred > 0)
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.4), constrained_layout=True)
    for ax, img, name in ((axes[0], np.where(pred > 0, pred, np.nan), "predicted depth [m]"),
                          (axes[1], np.where(gt > 0, gt, np.nan), "ground truth [m]")):
        im = ax.imshow(img, vmin=lo, vmax=hi, cmap="viridis")
        ax.set_title(name)
        fig.colorbar(im, ax=ax, shrink=0.8)
    finite = err[np.isfinite(err)]
    vmax = float(np.percentile(finite, 99)) if finite.size else 1.0
    im = axes[2].imshow(err * 100.0, vmin=0.0, vmax=max(vmax * 100.0, 1e-3), cmap="magma")
    axes[2].imshow(np.where(missing, 1.0, np.nan), cmap="cool", vmin=0, vmax=1, alpha=0.8)
    axes[2].set_title("|error| [cm] (cyan: missing)")
    fig.colorbar(im, ax=axes[2], shrink=0.8)
    for ax in axes:
        ax.set_axis_off()
    if title:
        fig.suptitle(title)
    return _save(fig, path)


def metrics_figure(rows, path):
    """Delta accuracies per evaluation scope as grouped bars."""
    names = list(rows)
    keys = ("delta_105", "delta_110", "delta_125")
    fig, ax = plt.subplots(figsize=(6, 3.4), constrained_layout=True)
    width = 0.8 / max(len(names), 1)
    x = np.arange(len(keys))
    for i, name in enumerate(names):
        vals = [rows[name].get(k) or 0.0 for k in keys]
        ax.bar(x + i * width, vals, width, label=name)
    ax.set_xticks(x + width * (len(names) - 1) / 2, ["δ<1.05", "δ<1.10", "δ<1.25"])
    ax.set_ylim(0, 100)
    ax.set_ylabel("pixels [%]")
    ax.legend()
    return _save(fig, path)


def pose_figure(report, path):
    """Threshold accuracies (left) and per-instance rotation/translation errors (right)."""
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(11, 3.6), constrained_layout=True)
    labels = [f"IoU{int(t * 100)}" for t in IOU_THRESHOLDS] + [f"{d}°{c}cm" for d, c in POSE_THRESHOLDS]
    vals = [report.iou25, report.iou50, report.iou75] + [report.accuracy[threshold_key(d, c)]
                                                         for d, c in POSE_THRESHOLDS]
    ax0.bar(np.arange(len(vals)), vals, color="tab:blue")
    ax0.set_xticks(np.arange(len(vals)), labels, rotation=45, ha="right")
    ax0.set_ylim(0, 100)
    ax0.set_ylabel("instances [%]")
    rot = [r["rot_deg"] for r in report.per_instance]
    trans = [r["trans_cm"] for r in report.per_instance]
    ax1.scatter(trans, rot, s=18)
    for d, c in POSE_THRESHOLDS:
        ax1.plot([0, c, c], [d, d, 0], lw=0.8, color="grey")
    ax1.set_xlabel("translation error [cm]")
    ax1.set_ylabel("rotation error [deg]")
    ax1.set_xlim(left=0)
    ax1.set_ylim(bottom=0)
    return _save(fig, path)
