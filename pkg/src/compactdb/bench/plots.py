"""Figures written next to the metrics CSV."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.ticker import MaxNLocator  # noqa: E402

from .metrics import Metrics  # noqa: E402


def figure_paths(csv_path: str | Path) -> dict[str, Path]:
    p = Path(csv_path)
    stem = p.with_suffix("")
    return {
        "throughput": Path(f"{stem}_throughput.png"),
        "snapshots": Path(f"{stem}_snapshots.png"),
    }


def throughput_figure(metrics: Metrics, path: str | Path) -> Path:
    """Transactions per second per bucket, with committed freezes marked."""
    fig, ax = plt.subplots(figsize=(7, 3.2))
    t, x, y = 0.0, [], []
    for b in metrics.buckets:
        t += b.seconds
        x.append(t)
        y.append(b.tps)
    ax.plot(x, y, lw=1.2, color="tab:blue", label="transactions/s")
    frozen = sum(1 for f in metrics.freezes if f.committed)
    ax.set_xlabel("elapsed [s]")
    ax.set_ylabel("throughput [tx/s]")
    ax.set_ylim(bottom=0)
    ax.set_title(f"OLTP throughput ({frozen} chunks frozen)")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def snapshot_figure(metrics: Metrics, path: str | Path) -> Path:
    """Descriptors copied and pages replicated per snapshot."""
    fig, ax = plt.subplots(figsize=(7, 3.2))
    epochs = [s.epoch for s in metrics.snapshots]
    ax.plot(epochs, [s.descriptors_copied for s in metrics.snapshots], "o-", label="descriptors copied")
    ax.plot(epochs, [s.pages_replicated for s in metrics.snapshots], "s--", label="pages replicated")
    ax.set_xlabel("snapshot epoch")
    ax.xaxis.set_major_locator(MaxNLocator(integer=True))
    ax.set_ylabel("count")
    ax.set_ylim(bottom=0)
    ax.legend(frameon=False)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def write_figures(metrics: Metrics, csv_path: str | Path) -> list[Path]:
    paths = figure_paths(csv_path)
    out = []
    if metrics.buckets:
        out.append(throughput_figure(metrics, paths["throughput"]))
    if metrics.snapshots:
        out.append(snapshot_figure(metrics, paths["snapshots"]))
    return out
