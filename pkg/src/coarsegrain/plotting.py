"""Headless SVG figures: field overlays and loss traces."""
import matplotlib

matplotlib.use("svg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# deterministic SVG output (no timestamps, stable element ids)
matplotlib.rcParams["svg.hashsalt"] = "coarsegrain"
matplotlib.rcParams["svg.fonttype"] = "none"
_META = {"Date": None, "Creator": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)


def plot_run(report, path, frame=None):
    """Frame (optional), drift and diffusion overlays for one run."""
    ncols = 3 if frame is not None else 2
    fig, axes = plt.subplots(1, ncols, figsize=(4.2 * ncols, 3.6))
    axes = list(np.atleast_1d(axes))
    if frame is not None:
        ax = axes.pop(0)
        ax.imshow(frame, cmap="viridis", origin="upper")
        ax.set_title("frame")
        ax.set_xticks([])
        ax.set_yticks([])
    c, t = report.curve, report.truth_curve
    for ax, key, label in ((axes[0], "drift", "drift"), (axes[1], "diff_sq", "diffusion")):
        ax.plot(t.grid, getattr(t, key), "k--", label="ground truth")
        if report.truth_coord_curve is not None:
            ax.plot(t.grid, getattr(report.truth_coord_curve, key), color="tab:blue", label="estimator, true latent")
        ax.plot(c.grid, getattr(c, key), color="tab:orange", label="estimator, learned latent")
        ax.set_xlabel("x")
        ax.set_title(label)
    axes[0].axhline(0.0, color="0.7", lw=0.8)
    axes[0].legend(fontsize=7, loc="best")
    _save(fig, path)


def plot_aggregate(summary, traces, path):
    """Loss traces of all seeds, and banded drift/diffusion across seeds."""
    fig, axes = plt.subplots(1, 3, figsize=(12.6, 3.6))
    ax = axes[0]
    for tr in traces:
        ax.plot(np.arange(1, len(tr) + 1), tr, color="tab:orange", alpha=0.6, lw=0.8)
    ax.set_yscale("log")
    ax.set_xlabel("training step")
    ax.set_title("loss")
    grid = np.asarray(summary["grid"])
    for ax, key, label in ((axes[1], "drift", "drift"), (axes[2], "diff_sq", "diffusion")):
        band = summary[key]
        ax.fill_between(grid, band["lo"], band["hi"], color="tab:orange", alpha=0.3, lw=0,
                        label=f"{summary['percentiles'][0]:g}-{summary['percentiles'][1]:g}%")
        ax.plot(grid, band["mean"], color="tab:orange", label="mean over seeds")
        ax.plot(grid, summary["truth"][key], "k--", label="ground truth")
        ax.set_xlabel("x")
        ax.set_title(label)
    axes[1].axhline(0.0, color="0.7", lw=0.8)
    axes[1].legend(fontsize=7, loc="best")
    _save(fig, path)
