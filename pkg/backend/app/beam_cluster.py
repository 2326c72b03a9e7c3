"""
Unsupervised beam clustering
----------------------------
Welch spectra per beam, mode-seeking prototype selection over spectral
dissimilarities, the dissimilarity representation of every beam against
the prototypes, and robust outlier flagging of target beams.
"""

import logging
import math
from typing import List, Optional, Sequence

import numpy as np
from scipy.signal import welch
from scipy.stats import gmean

from .divergence import PROBABILITY_FLOOR, pair_dissimilarities, pairwise_dissimilarity
from .errors import DimensionMismatchError, InvalidInputError
from .models import (
    ChannelSpectrum,
    ConvexGenerator,
    Direction,
    DissimilarityMeasure,
    DissimilarityRepresentation,
    MeasureKind,
    MultichannelSignal,
)

logger = logging.getLogger(__name__)

MAD_SCALE = 1.4826

DEFAULT_SPECTRUM_MEASURE = DissimilarityMeasure(
    kind=MeasureKind.BREGMAN,
    generator=ConvexGenerator.SHANNON_ENTROPY_BITS,
    direction=Direction.SYMMETRIC,
)


def welch_psd(
    channel,
    segment_length: int = 1024,
    overlap_fraction: float = 0.5,
    sample_rate_hz: float = 1.0,
    channel_index: int = 0,
) -> ChannelSpectrum:
    """
    One-sided Welch PSD with a Hann window.

    Args:
        channel: 1-D sample sequence, at least ``segment_length`` long
        segment_length: Samples per segment
        overlap_fraction: Fraction of a segment shared with the next, in [0, 1)
        sample_rate_hz: Sample rate, sets the bin spacing
        channel_index: Beam the spectrum belongs to

    Returns:
        A ``ChannelSpectrum`` with segment_length // 2 + 1 bins
    """
    x = np.asarray(channel, dtype=float)
    if x.ndim != 1:
        raise InvalidInputError("channel must be one-dimensional")
    if segment_length < 2 or x.size < segment_length:
        raise InvalidInputError(f"need at least {segment_length} samples, got {x.size}")
    if not 0 <= overlap_fraction < 1:
        raise InvalidInputError("overlap_fraction must lie in [0, 1)")
    _, psd = welch(
        x,
        fs=sample_rate_hz,
        window="hann",
        nperseg=segment_length,
        noverlap=int(overlap_fraction * segment_length),
        detrend=False,
        scaling="density",
    )
    return ChannelSpectrum(
        psd=psd,
        freq_resolution_hz=sample_rate_hz / segment_length,
        channel_index=channel_index,
    )


def channel_spectra(
    signal: MultichannelSignal, segment_length: int = 1024, overlap_fraction: float = 0.5
) -> List[ChannelSpectrum]:
    return [
        welch_psd(beam, segment_length, overlap_fraction, signal.sample_rate_hz, channel_index=i)
        for i, beam in enumerate(signal.data)
    ]


def spectral_flatness(psd) -> float:
    """Geometric over arithmetic mean of the PSD bins, in (0, 1]."""
    psd = np.maximum(np.asarray(psd, dtype=float), PROBABILITY_FLOOR)
    return float(gmean(psd) / np.mean(psd))


def _normalized_matrix(spectra: Sequence[ChannelSpectrum]) -> np.ndarray:
    if not spectra:
        raise InvalidInputError("no spectra given")
    n_bins = spectra[0].psd.size
    for i, spectrum in enumerate(spectra):
        if spectrum.psd.size != n_bins:
            raise DimensionMismatchError(f"spectrum has {spectrum.psd.size} bins, expected {n_bins}", index=i)
    return np.vstack([spectrum.normalized() for spectrum in spectra])


def spectrum_dissimilarities(
    spectra: Sequence[ChannelSpectrum], measure: DissimilarityMeasure = DEFAULT_SPECTRUM_MEASURE
) -> np.ndarray:
    """Dissimilarity matrix between the normalised spectra."""
    return pairwise_dissimilarity(_normalized_matrix(spectra), measure)


def default_k(n_channels: int) -> int:
    return max(2, math.ceil(math.sqrt(n_channels)))


def modeseek(dissimilarities, k: int) -> List[int]:
    """
    Prototype selection by mode seeking.

    Each point's density is the reciprocal of its distance to its k-th
    nearest other point. A point's neighbourhood is itself plus its k nearest
    others (ties broken by lower index); it links to the densest member of
    that neighbourhood, again preferring lower indices on ties. Following the
    links from every point ends at the modes.

    Args:
        dissimilarities: Symmetric n x n matrix with a zero diagonal
        k: Neighbourhood size, 2 <= k < n

    Returns:
        Sorted indices of the modes
    """
    D = np.asarray(dissimilarities, dtype=float)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise DimensionMismatchError("dissimilarities must be a square matrix")
    n = D.shape[0]
    if not 2 <= k < n:
        raise InvalidInputError(f"k must satisfy 2 <= k < {n}, got {k}")
    if np.any(D < 0) or np.any(np.diag(D) != 0) or not np.all(np.isfinite(D)):
        raise InvalidInputError("dissimilarities must be finite, non-negative with a zero diagonal")

    index = np.arange(n)
    neighbourhoods = np.empty((n, k + 1), dtype=np.intp)
    for i in range(n):
        order = np.lexsort((index, index != i, D[i]))
        neighbourhoods[i] = order[: k + 1]
    kth = D[index, neighbourhoods[:, -1]]
    with np.errstate(divide="ignore"):
        density = np.where(kth > 0, 1.0 / np.where(kth > 0, kth, 1.0), np.inf)

    links = np.empty(n, dtype=np.intp)
    for i in range(n):
        members = np.sort(neighbourhoods[i])
        links[i] = members[np.argmax(density[members])]

    modes = set()
    for i in range(n):
        j = i
        while links[j] != j:
            j = links[j]
        modes.add(int(j))
    logger.debug("mode seeking with k=%d found %d modes", k, len(modes))
    return sorted(modes)


def dissimilarity_representation(
    spectra: Sequence[ChannelSpectrum],
    prototypes: Sequence[int],
    measure: DissimilarityMeasure = DEFAULT_SPECTRUM_MEASURE,
) -> DissimilarityRepresentation:
    """Coordinates of each channel as its dissimilarities to the prototype channels."""
    P = _normalized_matrix(spectra)
    n = P.shape[0]
    prototypes = [int(p) for p in prototypes]
    if not prototypes:
        raise InvalidInputError("at least one prototype is required")
    for proto in prototypes:
        if not 0 <= proto < n:
            raise InvalidInputError(f"prototype {proto} outside 0..{n - 1}", index=proto)
    rows = np.repeat(np.arange(n), len(prototypes))
    cols = np.tile(prototypes, n)
    coords = pair_dissimilarities(P, measure, rows, cols).reshape(n, len(prototypes))
    for j, proto in enumerate(prototypes):
        coords[proto, j] = 0.0
    return DissimilarityRepresentation(prototypes=prototypes, coords=coords)


def outlier_scores(rep: DissimilarityRepresentation) -> np.ndarray:
    """
    Robust z-scores of each channel's distance to the coordinate-wise median.

    A prototype's zero coordinate on its own axis is replaced by the median
    of that axis over the other channels before scoring.
    """
    coords = np.array(rep.coords, dtype=float)
    for j, proto in enumerate(rep.prototypes):
        others = np.delete(coords[:, j], proto)
        if others.size:
            coords[proto, j] = np.median(others)
    centre = np.median(coords, axis=0)
    distance = np.linalg.norm(coords - centre, axis=1)
    median = np.median(distance)
    scale = MAD_SCALE * np.median(np.abs(distance - median))
    if scale > 0:
        return (distance - median) / scale
    return np.where(distance > median, np.inf, 0.0)


def flag_outlier_beams(rep: DissimilarityRepresentation, z_threshold: float = 6.0) -> List[int]:
    """Channels whose robust z-score exceeds ``z_threshold``, sorted."""
    if rep.n_channels < 4:
        raise InvalidInputError("outlier flagging needs at least four channels")
    if not z_threshold > 0:
        raise InvalidInputError("z_threshold must be positive")
    return [int(i) for i in np.flatnonzero(outlier_scores(rep) > z_threshold)]


def cluster_beams(
    spectra: Sequence[ChannelSpectrum],
    measure: DissimilarityMeasure = DEFAULT_SPECTRUM_MEASURE,
    k: Optional[int] = None,
    z_threshold: float = 6.0,
):
    """Prototype selection, representation and flagging in one call."""
    D = spectrum_dissimilarities(spectra, measure)
    k = default_k(len(spectra)) if k is None else k
    prototypes = modeseek(D, k)
    rep = dissimilarity_representation(spectra, prototypes, measure)
    flagged = flag_outlier_beams(rep, z_threshold)
    logger.info("prototypes %s, flagged beams %s", prototypes, flagged)
    return rep, flagged
