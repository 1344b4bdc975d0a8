"""Figure rendering for the command-line reports.

Every function renders one PNG to a caller-chosen path using the
non-interactive backend, so commands work headless. Figures are summaries
of artifacts that are also written in machine-readable form (CSV, JSON,
manifest); nothing downstream parses the images.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "save_training_curves",
    "save_metric_histograms",
    "save_spectrogram_example",
    "save_corpus_overview",
]

_DPI = 120


def save_training_curves(history: list[dict], path: str, switched_epoch: int | None = None) -> str:
    """Loss-versus-epoch curves: reconstruction on the left, recognition on
    the right (blank until the joint phase). A vertical line marks the
    curriculum switch."""
    epochs = [row["epoch"] for row in history]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    for ax, key, title in (
        (axes[0], "L_re", "reconstruction loss"),
        (axes[1], "L_lm", "recognition loss"),
    ):
        for split in ("train", "val"):
            ys = [row[f"{split}_{key}"] for row in history]
            pts = [(e, y) for e, y in zip(epochs, ys) if not math.isnan(y)]
            if pts:
                ax.plot([p[0] for p in pts], [p[1] for p in pts], marker=".", label=split)
        if switched_epoch is not None:
            ax.axvline(switched_epoch + 0.5, color="gray", linestyle="--", linewidth=1)
        ax.set_xlabel("epoch")
        ax.set_title(title)
        if ax.get_legend_handles_labels()[0]:
            ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def save_metric_histograms(report, path: str) -> str:
    """Per-utterance metric distributions for one evaluation run."""
    panels = [
        ("snr_db", "output SNR (dB)"),
        ("lsd", "log-spectral distance (dB)"),
        ("sdr_db", "SDR (dB)"),
        ("wer", "word error rate"),
    ]
    fig, axes = plt.subplots(2, 2, figsize=(8, 6))
    for ax, (key, title) in zip(axes.ravel(), panels):
        values = [getattr(r, key) for r in report.rows]
        values = [v for v in values if not math.isnan(v)]
        if values:
            ax.hist(values, bins=min(20, max(5, len(values) // 4)), color="#4878b0")
        else:
            ax.text(0.5, 0.5, "not available", ha="center", va="center", transform=ax.transAxes)
        ax.set_title(title, fontsize=10)
    fig.suptitle(f"{report.estimate_source} estimates on split '{report.split}'", fontsize=11)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def save_spectrogram_example(
    noisy_mags: np.ndarray,
    denoised_mags: np.ndarray,
    clean_mags: np.ndarray,
    path: str,
    utterance_id: str = "",
) -> str:
    """Log-magnitude images of one utterance: noisy input, model output,
    clean reference."""
    panels = [(noisy_mags, "noisy"), (denoised_mags, "denoised"), (clean_mags, "clean")]
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.2), sharey=True)
    floor = 1e-6
    vmax = max(float(np.max(m)) for m, _ in panels) + floor
    for ax, (mags, title) in zip(axes, panels):
        img = 20.0 * np.log10(np.asarray(mags).T + floor)
        ax.imshow(
            img,
            origin="lower",
            aspect="auto",
            cmap="magma",
            vmin=20.0 * np.log10(floor),
            vmax=20.0 * np.log10(vmax),
        )
        ax.set_title(title, fontsize=10)
        ax.set_xlabel("frame")
    axes[0].set_ylabel("frequency bin")
    if utterance_id:
        fig.suptitle(utterance_id, fontsize=11)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def save_corpus_overview(manifest_rows, path: str) -> str:
    """Corpus composition at a glance: mixing-SNR spread, transcript
    lengths, split sizes, and room-impulse usage."""
    snrs = [row.snr_db for row in manifest_rows]
    lengths = [len(row.words) for row in manifest_rows]
    splits: dict[str, int] = {}
    rirs: dict[int, int] = {}
    for row in manifest_rows:
        splits[row.split] = splits.get(row.split, 0) + 1
        rirs[row.rir_id] = rirs.get(row.rir_id, 0) + 1

    fig, axes = plt.subplots(2, 2, figsize=(8, 6))
    axes[0, 0].hist(snrs, bins=15, color="#4878b0")
    axes[0, 0].set_title("mixing SNR (dB)", fontsize=10)
    axes[0, 1].hist(lengths, bins=range(min(lengths), max(lengths) + 2), color="#ee854a")
    axes[0, 1].set_title("words per utterance", fontsize=10)
    order = [s for s in ("train", "val", "test") if s in splits] + sorted(
        s for s in splits if s not in ("train", "val", "test")
    )
    axes[1, 0].bar(order, [splits[s] for s in order], color="#6acc64")
    axes[1, 0].set_title("utterances per split", fontsize=10)
    rir_ids = sorted(rirs)
    axes[1, 1].bar([str(r) for r in rir_ids], [rirs[r] for r in rir_ids], color="#956cb4")
    axes[1, 1].set_title("room impulse usage", fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path
