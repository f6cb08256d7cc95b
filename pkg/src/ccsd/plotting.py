"""Matplotlib figures written next to the CSV/JSON outputs of the CLI."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    # fixed metadata keeps repeated runs byte-identical
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return Path(path)


def plot_loss_curves(curve: Sequence[Mapping], path) -> Path:
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
    for ax, key in zip(axes, ("loss_x", "loss_a", "loss_f")):
        for split, style in (("train", "-"), ("test", "o--")):
            rows = [r for r in curve if r["split"] == split]
            if rows:
                ax.plot([r["step"] for r in rows], [r[key] for r in rows], style, label=split, ms=3)
        ax.set_yscale("log")
        ax.set_xlabel("step")
        ax.set_title(key)
        ax.legend()
    return _save(fig, path)


def plot_histogram_pair(gen: np.ndarray, ref: np.ndarray, path, title: str, xlabel: str) -> Path:
    """Mean normalized histograms of two sample sets, side by side."""
    length = max(len(gen), len(ref))
    g = np.pad(gen, (0, length - len(gen)))
    r = np.pad(ref, (0, length - len(ref)))
    x = np.arange(length)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(x - 0.2, r, width=0.4, label="reference")
    ax.bar(x + 0.2, g, width=0.4, label="generated")
    ax.set_xlabel(xlabel)
    ax.set_title(title)
    ax.legend()
    return _save(fig, path)


def plot_spectra(gen: Sequence[np.ndarray], ref: Sequence[np.ndarray], path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for spectra, colour, label in ((ref, "C0", "reference"), (gen, "C1", "generated")):
        for i, s in enumerate(spectra):
            nz = s[s > 1e-9]
            ax.plot(np.arange(len(nz)), nz, color=colour, alpha=0.3, label=label if i == 0 else None)
    ax.set_xlabel("index")
    ax.set_ylabel("eigenvalue")
    ax.set_title("Hodge Laplacian spectra (nonzero part)")
    ax.legend()
    return _save(fig, path)


def mean_histogram(hists: Sequence[np.ndarray]) -> np.ndarray:
    length = max(len(h) for h in hists)
    stacked = np.stack([np.pad(h / max(h.sum(), 1e-12), (0, length - len(h))) for h in hists])
    return stacked.mean(0)
