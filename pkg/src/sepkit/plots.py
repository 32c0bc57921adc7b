"""Figure rendering for reports: every plot lands next to its CSV.

All functions write a file and return its path; nothing ever opens a
window (the Agg backend is forced on import so the CLI works headless).
A shared rc style keeps the report figures uniform.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .signal import Waveform  # noqa: E402
from .transforms import FrameSpec, stft  # noqa: E402

_STYLE = {
    "figure.dpi": 120,
    "figure.facecolor": "white",
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
}


def _finish(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def save_training_curve(steps: Sequence[int], losses: Sequence[float],
                        path, title: str = "Training loss") -> Path:
    """Loss against step, with a short moving average over the raw curve."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6, 3.2))
        losses = np.asarray(losses, dtype=float)
        ax.plot(steps, losses, lw=0.8, alpha=0.5, label="per step")
        window = max(1, len(losses) // 50)
        if window > 1 and len(losses) >= window:
            kernel = np.ones(window) / window
            smooth = np.convolve(losses, kernel, mode="valid")
            ax.plot(np.asarray(steps)[window - 1:], smooth, lw=1.5,
                    label=f"mean of {window}")
            ax.legend(loc="upper right")
        ax.set_xlabel("step")
        ax.set_ylabel("negative SNR loss (dB)")
        ax.set_title(title)
        return _finish(fig, path)


def save_improvement_histogram(improvements_db: Sequence[float], path,
                               title: str = "SI-SDR improvement") -> Path:
    """Distribution of per-source improvements with the median marked."""
    finite = [v for v in improvements_db if math.isfinite(v)]
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        if finite:
            ax.hist(finite, bins=30, color="tab:blue", alpha=0.75)
            median = float(np.median(finite))
            ax.axvline(median, color="tab:red", lw=1.5,
                       label=f"median {median:.2f} dB")
            ax.legend(loc="upper left")
        ax.set_xlabel("SI-SDR improvement (dB)")
        ax.set_ylabel("sources")
        ax.set_title(title)
        return _finish(fig, path)


def save_sweep_curve(window_ms: Sequence[float], medians_db: Sequence[float],
                     path, title: str = "Window-size sweep") -> Path:
    """Median improvement against analysis window size (log-scaled x)."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.plot(window_ms, medians_db, marker="o")
        ax.set_xscale("log")
        ax.set_xticks(list(window_ms))
        ax.set_xticklabels([f"{w:g}" for w in window_ms])
        ax.set_xlabel("window (ms)")
        ax.set_ylabel("median SI-SDR improvement (dB)")
        ax.set_title(title)
        return _finish(fig, path)


def save_separation_report(mixture: Waveform, estimates: Sequence[Waveform],
                           spec: FrameSpec, path) -> Path:
    """Log-magnitude spectrograms of the mixture and each estimate."""
    signals = [("mixture", mixture)] + [(f"estimate {k}", est)
                                        for k, est in enumerate(estimates)]
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(len(signals), 1, sharex=True,
                                 figsize=(6, 1.9 * len(signals)))
        axes = np.atleast_1d(axes)
        for ax, (label, wave) in zip(axes, signals):
            coeffs = stft(wave, spec)
            magnitude_db = 20 * np.log10(np.abs(coeffs.data.T) + 1e-8)
            extent = (0, wave.duration_s, 0, wave.sample_rate_hz / 2 / 1000)
            ax.imshow(magnitude_db, origin="lower", aspect="auto",
                      extent=extent, cmap="magma",
                      vmin=magnitude_db.max() - 80)
            ax.grid(False)
            ax.set_ylabel(f"{label}\nkHz")
        axes[-1].set_xlabel("time (s)")
        return _finish(fig, path)
