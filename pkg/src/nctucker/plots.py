"""Report figures rendered next to the CLI's delimited outputs."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_convergence_figure(trace, path):
    """Objective components per epoch on a log scale."""
    epochs = [row[0] for row in trace]
    fig, ax = plt.subplots(figsize=(6, 4))
    for i, label in ((1, "f"), (2, "f_g"), (3, "f_opt")):
        series = [row[i] for row in trace]
        if any(v > 0 for v in series):
            ax.semilogy(epochs, series, label=label)
        else:
            ax.plot(epochs, series, label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("objective")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_gap_figure(table, selected_k, path):
    """Gap curve with standard-error bars and the selected cluster count."""
    ks = [row[0] for row in table]
    gaps = [row[1] for row in table]
    ses = [row[2] for row in table]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(ks, gaps, yerr=ses, marker="o", capsize=3)
    ax.axvline(selected_k, color="tab:red", linestyle="--",
               label=f"selected k = {selected_k}")
    ax.set_xlabel("clusters k")
    ax.set_ylabel("gap")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_cluster_sizes_figure(assignments, path):
    """Bar chart of cluster occupancy."""
    counts = np.bincount(assignments)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(np.arange(1, counts.size + 1), counts)
    ax.set_xlabel("cluster")
    ax.set_ylabel("entities")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_subtype_figure(subtype, path):
    """Heatmap of S flanked by its row and platform influence bars."""
    fig, axes = plt.subplots(
        1, 3, figsize=(10, 4), gridspec_kw={"width_ratios": [3, 1.2, 1.2]}
    )
    im = axes[0].imshow(subtype.s, aspect="auto", cmap="viridis")
    axes[0].set_xlabel("mode-3 component")
    axes[0].set_ylabel("mode-2 component")
    fig.colorbar(im, ax=axes[0], shrink=0.85)
    axes[1].barh(
        np.arange(1, subtype.row_influence.size + 1), subtype.row_influence
    )
    axes[1].set_xlabel("row influence")
    axes[1].set_ylabel("component")
    axes[2].barh(
        np.arange(1, subtype.platform_influence.size + 1),
        subtype.platform_influence,
        color="tab:orange",
    )
    axes[2].set_xlabel("platform influence")
    axes[2].set_ylabel("platform")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_topk_figure(u_q, results, path):
    """Query factor profile and distances of the nearest entities."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    axes[0].bar(np.arange(1, len(u_q) + 1), u_q)
    axes[0].set_xlabel("component")
    axes[0].set_ylabel("query factor")
    labels = [str(entity + 1) for entity, _ in results]
    axes[1].barh(np.arange(len(results)), [d for _, d in results],
                 color="tab:green")
    axes[1].set_yticks(np.arange(len(results)), labels)
    axes[1].invert_yaxis()
    axes[1].set_xlabel("distance")
    axes[1].set_ylabel("entity")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
