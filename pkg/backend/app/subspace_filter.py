"""
Subspace filtering of beam time series.

Each beam is delay-embedded into overlapping windows, the windows are
unmixed by scikit-learn's symmetric FastICA into independent sources, sources with a flat
spectrum are treated as noise, and the beam is rebuilt from the remaining
sources by diagonal averaging.
"""

import logging
import warnings
from typing import Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import welch
from sklearn.decomposition import PCA, FastICA
from sklearn.exceptions import ConvergenceWarning

from .beam_cluster import spectral_flatness
from .errors import DimensionMismatchError, IcaConvergenceError, InvalidInputError
from .models import EmbeddingConfig, MultichannelSignal, SourceBank

logger = logging.getLogger(__name__)

MIN_ROWS_PER_COMPONENT = 10


def embed(channel, window_length: int, hop: int = 1) -> np.ndarray:
    """Trajectory matrix whose row t is channel[t*hop : t*hop + window_length]."""
    x = np.asarray(channel, dtype=float)
    if x.ndim != 1:
        raise InvalidInputError("channel must be one-dimensional")
    if window_length < 1 or hop < 1:
        raise InvalidInputError("window_length and hop must be positive")
    if x.size < window_length:
        raise InvalidInputError(f"channel has {x.size} samples, window needs {window_length}")
    return np.array(sliding_window_view(x, window_length)[::hop])


def stack_trajectories(channels: Sequence, window_length: int, hop: int = 1) -> np.ndarray:
    """Trajectory matrices of several channels stacked row-wise."""
    return np.vstack([embed(channel, window_length, hop) for channel in channels])


def _run_fastica(Z: np.ndarray, cfg: EmbeddingConfig, max_iter: int, w_init=None) -> Tuple[FastICA, bool]:
    ica = FastICA(
        algorithm="parallel",
        whiten=False,
        fun="logcosh",
        max_iter=max_iter,
        tol=cfg.tol,
        w_init=w_init,
        random_state=cfg.seed,
    )
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        ica.fit(Z)
    converged = not any(issubclass(w.category, ConvergenceWarning) for w in caught)
    return ica, converged


def _last_delta(Z: np.ndarray, cfg: EmbeddingConfig, W: np.ndarray) -> float:
    """Change of the unmixing rows over one more fixed-point step from ``W``."""
    step, _ = _run_fastica(Z, cfg, max_iter=1, w_init=W)
    return float(np.max(np.abs(np.abs(np.einsum("ij,ij->i", step.components_, W)) - 1.0)))


def _unmix(Z: np.ndarray, cfg: EmbeddingConfig) -> Tuple[np.ndarray, int]:
    """Symmetric FastICA (tanh nonlinearity) on whitened rows ``Z``; returns the rotation and iterations."""
    ica, converged = _run_fastica(Z, cfg, max_iter=cfg.max_iter)
    W, n_iter = ica.components_, int(ica.n_iter_)
    if converged:
        logger.debug("FastICA converged after %d iterations", n_iter)
        return W, n_iter
    delta = _last_delta(Z, cfg, W)
    if cfg.ica_tolerate_nonconvergence:
        logger.warning(
            "FastICA stopped after %d iterations with delta %.3g; keeping the last estimate", n_iter, delta
        )
        return W, n_iter
    raise IcaConvergenceError(n_iter, delta)


def source_flatness(sources: np.ndarray) -> list:
    """Spectral flatness of each source column, DC and Nyquist bins excluded."""
    n_samples = sources.shape[0]
    nperseg = min(256, n_samples)
    values = []
    for column in sources.T:
        _, psd = welch(column, nperseg=nperseg, detrend=False)
        values.append(spectral_flatness(psd[1:-1] if psd.size > 2 else psd))
    return values


def fit_sources(trajectories, cfg: EmbeddingConfig) -> SourceBank:
    """
    Fit independent sources to a trajectory matrix.

    Args:
        trajectories: T x L matrix of embedded windows, L = cfg.window_length
        cfg: Embedding, ICA and flatness settings

    Returns:
        A ``SourceBank`` with unit-norm mixing columns and a signal/noise mask

    Raises:
        InvalidInputError: If there are fewer than 10 rows per component
        IcaConvergenceError: If FastICA does not converge and the config
            does not tolerate it
    """
    T = np.asarray(trajectories, dtype=float)
    if T.ndim != 2 or T.shape[1] != cfg.window_length:
        raise DimensionMismatchError(f"trajectories must have {cfg.window_length} columns")
    if T.shape[0] < MIN_ROWS_PER_COMPONENT * cfg.n_components:
        raise InvalidInputError(
            f"{T.shape[0]} rows are too few for {cfg.n_components} components"
        )

    pca = PCA(n_components=cfg.n_components, whiten=True, svd_solver="full").fit(T)
    if np.any(pca.explained_variance_ <= np.finfo(float).eps * max(pca.explained_variance_.max(), 1.0)):
        raise InvalidInputError("trajectory matrix has rank below n_components")
    whitening = pca.components_ / np.sqrt(pca.explained_variance_)[:, None]
    Z = (T - pca.mean_) @ whitening.T

    rotation, n_iter = _unmix(Z, cfg)
    unmixing = rotation @ whitening
    mixing = np.linalg.pinv(unmixing)
    norms = np.linalg.norm(mixing, axis=0)
    mixing = mixing / norms
    unmixing = unmixing * norms[:, None]

    sources = (T - pca.mean_) @ unmixing.T
    flatness = source_flatness(sources)
    mask = [value <= cfg.flatness_threshold for value in flatness]
    logger.info(
        "fitted %d sources on %d windows: %d signal, %d noise",
        cfg.n_components, T.shape[0], sum(mask), len(mask) - sum(mask),
    )
    return SourceBank(
        mixing=mixing,
        unmixing=unmixing,
        signal_mask=mask,
        flatness=flatness,
        config=cfg,
        n_iter=n_iter,
    )


def signal_projector(bank: SourceBank) -> np.ndarray:
    """L x L oblique projector onto the span of the signal sources; zero when there are none."""
    signal = bank.signal_indices
    L = bank.mixing.shape[0]
    if not signal:
        return np.zeros((L, L))
    return bank.mixing[:, signal] @ bank.unmixing[signal]


def reconstruct(
    channel, bank: SourceBank, cfg: Optional[EmbeddingConfig] = None
) -> np.ndarray:
    """
    Rebuild a channel from the signal sources of ``bank``.

    The channel is embedded with the window of ``bank`` and the hop of
    ``cfg`` (default the bank config), each window is projected onto the
    span of the signal sources, and overlapping samples are averaged. A tail window is added when the
    hop does not land on the last sample, so every sample is covered.
    The map is linear in ``channel``.
    """
    x = np.asarray(channel, dtype=float)
    if x.ndim != 1:
        raise InvalidInputError("channel must be one-dimensional")
    cfg = bank.config if cfg is None else cfg
    if (cfg.window_length, cfg.n_components) != (bank.config.window_length, bank.config.n_components):
        raise InvalidInputError("embedding config does not match the source bank")
    L, hop = cfg.window_length, cfg.hop
    if x.size < L:
        raise InvalidInputError(f"channel has {x.size} samples, window needs {L}")

    signal = bank.signal_indices
    if not signal:
        return np.zeros_like(x)

    starts = np.arange(0, x.size - L + 1, hop)
    if starts[-1] != x.size - L:
        starts = np.append(starts, x.size - L)
    windows = x[starts[:, None] + np.arange(L)]
    projector = signal_projector(bank)
    rebuilt = windows @ projector.T

    total = np.zeros(x.size)
    counts = np.zeros(x.size)
    for j in range(L):
        total[starts + j] += rebuilt[:, j]
        counts[starts + j] += 1.0
    return total / counts


def filter_signal(
    signal: MultichannelSignal, bank: SourceBank, cfg: Optional[EmbeddingConfig] = None
) -> MultichannelSignal:
    """Reconstruct every beam of ``signal`` from the signal sources of ``bank``."""
    data = np.vstack([reconstruct(beam, bank, cfg) for beam in signal.data])
    return MultichannelSignal(
        data=data,
        sample_rate_hz=signal.sample_rate_hz,
        metadata={**signal.metadata, "filtered": True},
    )
