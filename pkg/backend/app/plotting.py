"""SVG report figures: latent scatter plots, dissimilarity scatter plots and lofargrams."""

import logging
import os
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from scipy.signal import spectrogram  # noqa: E402

from .models import DissimilarityRepresentation, MultichannelSignal  # noqa: E402

logger = logging.getLogger(__name__)

# Stable element ids and no timestamp, so identical inputs give identical files.
plt.rcParams["svg.hashsalt"] = "sonarscale"
plt.rcParams["svg.fonttype"] = "none"
_SVG_METADATA = {"Date": None}


def _save(fig, path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.savefig(path, format="svg", metadata=_SVG_METADATA)
    plt.close(fig)
    logger.debug("wrote figure %s", path)


def _scatter(ax, coords: np.ndarray, **kwargs):
    if coords.shape[1] >= 3:
        return ax.scatter(coords[:, 0], coords[:, 1], coords[:, 2], **kwargs)
    if coords.shape[1] == 2:
        return ax.scatter(coords[:, 0], coords[:, 1], **kwargs)
    return ax.scatter(coords[:, 0], np.zeros(coords.shape[0]), **kwargs)


def _axes(fig, dims: int):
    if dims >= 3:
        return fig.add_subplot(projection="3d")
    return fig.add_subplot()


def plot_latent_scatter(points, path: str, title: str = "Latent projection", colour=None) -> None:
    """Scatter of latent points in 1, 2 or 3 dimensions, optionally coloured (e.g. by time)."""
    points = np.asarray(points, dtype=float)
    fig = plt.figure(figsize=(6, 5))
    ax = _axes(fig, points.shape[1])
    artist = _scatter(ax, points[:, :3], c=colour, s=6, cmap="viridis")
    if colour is not None:
        fig.colorbar(artist, ax=ax, shrink=0.7)
    ax.set_title(title)
    _save(fig, path)


def plot_dissimilarity_scatter(
    rep: DissimilarityRepresentation, flagged: Sequence[int], path: str, title: Optional[str] = None
) -> None:
    """Channels in prototype-dissimilarity coordinates, flagged channels highlighted and labelled."""
    coords = rep.coords[:, :3]
    mask = np.zeros(rep.n_channels, dtype=bool)
    mask[list(flagged)] = True
    fig = plt.figure(figsize=(6, 5))
    ax = _axes(fig, coords.shape[1])
    _scatter(ax, coords[~mask], s=14, color="tab:blue", label="channels")
    if mask.any():
        _scatter(ax, coords[mask], s=28, color="tab:red", label="flagged")
    for channel in np.flatnonzero(mask):
        position = list(coords[channel]) if coords.shape[1] > 1 else [coords[channel, 0], 0.0]
        ax.text(*position, str(channel), fontsize=7)
    labels = [f"d(., ch {p})" for p in rep.prototypes[:3]]
    ax.set_xlabel(labels[0])
    if len(labels) > 1:
        ax.set_ylabel(labels[1])
    if len(labels) > 2:
        ax.set_zlabel(labels[2])
    ax.legend(loc="best", fontsize=8)
    ax.set_title(title or f"Spectral dissimilarity to prototypes {rep.prototypes}")
    _save(fig, path)


def plot_lofargram(
    signal: MultichannelSignal, beam: int, path: str, segment_length: int = 1024, title: Optional[str] = None
) -> None:
    """Time-frequency intensity (dB) of one beam."""
    nperseg = min(segment_length, signal.n_samples)
    freqs, times, power = spectrogram(
        signal.data[beam], fs=signal.sample_rate_hz, window="hann", nperseg=nperseg, noverlap=nperseg // 2
    )
    level = 10.0 * np.log10(np.maximum(power, np.finfo(float).tiny))
    fig, ax = plt.subplots(figsize=(6, 5))
    mesh = ax.pcolormesh(freqs, times, level.T, shading="auto", cmap="gray_r")
    fig.colorbar(mesh, ax=ax, label="dB")
    ax.set_xlabel("Frequency (Hz)")
    ax.set_ylabel("Time (s)")
    ax.set_title(title or f"Beam {beam}")
    _save(fig, path)
