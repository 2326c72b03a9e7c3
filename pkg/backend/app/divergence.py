"""
Pairwise dissimilarities
------------------------
Euclidean distances, Bregman divergences under pluggable convex
generators, and the closed-form KL divergence between spherical Gaussians.

Matrix and pair-list evaluations are vectorised over fixed-size blocks of
pairs; each element is computed by the same expression whatever the
blocking, so results do not depend on it.
"""

import logging
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DimensionMismatchError, InvalidInputError
from .models import ConvexGenerator, Direction, DissimilarityMeasure, GaussianPoint, MeasureKind

logger = logging.getLogger(__name__)

PROBABILITY_FLOOR = 1e-15
NEGATIVE_FLOOR = -1e-12
SIMPLEX_TOLERANCE = 1e-9
PAIR_BLOCK = 65536

_INV_LN2 = 1.0 / np.log(2.0)

Points = Union[np.ndarray, Sequence[np.ndarray], Sequence[GaussianPoint]]


# ---------------------------------------------------------------------------
# Convex generators
# ---------------------------------------------------------------------------


def check_domain(x, generator: ConvexGenerator) -> np.ndarray:
    """Return ``x`` as a float vector, raising if it is outside F's domain."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.ndim != 1:
        raise InvalidInputError("generator input must be a vector or scalar")
    non_finite = np.flatnonzero(~np.isfinite(x))
    if non_finite.size:
        raise InvalidInputError("non-finite entry", index=int(non_finite[0]))

    if generator == ConvexGenerator.SHANNON_ENTROPY_BITS:
        negative = np.flatnonzero(x < 0)
        if negative.size:
            raise InvalidInputError("negative probability", index=int(negative[0]))
        total = x.sum()
        if abs(total - 1.0) > SIMPLEX_TOLERANCE:
            raise InvalidInputError(f"probabilities sum to {total!r}, not 1")
    elif generator == ConvexGenerator.XLOGX:
        non_positive = np.flatnonzero(x <= 0)
        if non_positive.size:
            raise InvalidInputError("x log x needs positive inputs", index=int(non_positive[0]))
    return x


def generator_value(generator: ConvexGenerator, x: np.ndarray) -> np.ndarray:
    """F evaluated on the last axis of ``x`` (a vector or a stack of rows)."""
    if generator == ConvexGenerator.SQUARED_NORM:
        return np.sum(x * x, axis=-1)
    if generator == ConvexGenerator.SHANNON_ENTROPY_BITS:
        return np.sum(x * np.log2(np.maximum(x, PROBABILITY_FLOOR)), axis=-1)
    return np.sum(x * np.log(x), axis=-1)


def generator_gradient(generator: ConvexGenerator, x: np.ndarray) -> np.ndarray:
    if generator == ConvexGenerator.SQUARED_NORM:
        return 2.0 * x
    if generator == ConvexGenerator.SHANNON_ENTROPY_BITS:
        return np.log2(np.maximum(x, PROBABILITY_FLOOR)) + _INV_LN2
    return np.log(x) + 1.0


def _clamp(value: float, index=None) -> float:
    if value < 0:
        if value < NEGATIVE_FLOOR:
            raise InvalidInputError(f"divergence evaluated to {value!r}", index=index)
        return 0.0
    return float(value)


def bregman(p, q, generator: ConvexGenerator) -> float:
    """
    Bregman divergence F(p) - F(q) - <p - q, grad F(q)>.

    Args:
        p: First point, inside the generator's domain
        q: Second point, same length as ``p``
        generator: The convex function F

    Returns:
        The non-negative divergence; float noise down to -1e-12 is clamped to 0
    """
    p = check_domain(p, generator)
    q = check_domain(q, generator)
    if p.shape != q.shape:
        raise DimensionMismatchError(f"points have lengths {p.size} and {q.size}")
    value = (
        generator_value(generator, p)
        - generator_value(generator, q)
        - float(np.dot(p - q, generator_gradient(generator, q)))
    )
    return _clamp(float(value))


# ---------------------------------------------------------------------------
# Gaussian points
# ---------------------------------------------------------------------------


def gaussian_kl(p: GaussianPoint, q: GaussianPoint) -> float:
    """Closed-form KL(N(mu_p, var_p I) || N(mu_q, var_q I))."""
    if p.dimension != q.dimension:
        raise DimensionMismatchError(f"dimensions {p.dimension} and {q.dimension} differ")
    if p.variance <= 0 or q.variance <= 0:
        raise InvalidInputError("variances must be positive")
    k = p.dimension
    sq = float(np.sum((q.mean - p.mean) ** 2))
    value = 0.5 * (
        k * p.variance / q.variance + sq / q.variance - k + k * np.log(q.variance / p.variance)
    )
    return _clamp(float(value))


def as_point_batch(points: Points) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Stack points into a P x n matrix, plus variances for Gaussian points."""
    if isinstance(points, np.ndarray):
        means, variances = np.asarray(points, dtype=float), None
    else:
        points = list(points)
        if points and isinstance(points[0], GaussianPoint):
            dimension = points[0].dimension
            for i, point in enumerate(points):
                if not isinstance(point, GaussianPoint):
                    raise InvalidInputError("cannot mix vectors and Gaussian points", index=i)
                if point.dimension != dimension:
                    raise DimensionMismatchError(
                        f"expected dimension {dimension}, got {point.dimension}", index=i
                    )
            means = np.array([point.mean for point in points])
            variances = np.array([point.variance for point in points])
        else:
            means, variances = np.asarray(points, dtype=float), None
    if means.ndim != 2:
        raise DimensionMismatchError("points must form a P x n matrix")
    return means, variances


# ---------------------------------------------------------------------------
# Pairwise evaluation
# ---------------------------------------------------------------------------


def validate_points(X: np.ndarray, measure: DissimilarityMeasure, variances=None) -> None:
    """Raise ``InvalidInputError`` naming the first point invalid for ``measure``."""
    non_finite = np.flatnonzero(~np.all(np.isfinite(X), axis=1))
    if non_finite.size:
        raise InvalidInputError("non-finite point", index=int(non_finite[0]))
    if measure.kind == MeasureKind.BREGMAN:
        for i, row in enumerate(X):
            try:
                check_domain(row, measure.generator)
            except InvalidInputError as exc:
                raise InvalidInputError(f"point {i} outside the generator domain: {exc}", index=i) from exc
    elif measure.kind == MeasureKind.GAUSSIAN_KL:
        if variances is None:
            raise InvalidInputError("gaussian_kl needs Gaussian points")
        variances = np.asarray(variances, dtype=float)
        if variances.shape != (X.shape[0],):
            raise DimensionMismatchError("one variance per point is required")
        bad = np.flatnonzero(~(variances > 0) | ~np.isfinite(variances))
        if bad.size:
            raise InvalidInputError("variance must be positive", index=int(bad[0]))


class _OrderedTerms:
    """d(x_a, x_b) for index arrays a, b under one measure kind."""

    def __init__(self, X: np.ndarray, measure: DissimilarityMeasure, variances=None):
        self.X = X
        self.kind = measure.kind
        if self.kind == MeasureKind.BREGMAN:
            self.F = generator_value(measure.generator, X)
            self.G = generator_gradient(measure.generator, X)
        if self.kind == MeasureKind.GAUSSIAN_KL:
            self.variances = np.asarray(variances, dtype=float)

    def __call__(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        X = self.X
        if self.kind == MeasureKind.EUCLIDEAN:
            return np.sqrt(np.sum((X[a] - X[b]) ** 2, axis=1))
        if self.kind == MeasureKind.SQUARED_EUCLIDEAN:
            return np.sum((X[a] - X[b]) ** 2, axis=1)
        if self.kind == MeasureKind.BREGMAN:
            return self.F[a] - self.F[b] - np.einsum("ij,ij->i", X[a] - X[b], self.G[b])
        k = X.shape[1]
        va, vb = self.variances[a], self.variances[b]
        sq = np.sum((X[b] - X[a]) ** 2, axis=1)
        return 0.5 * (k * va / vb + sq / vb - k + k * np.log(vb / va))


def pair_dissimilarities(
    X: np.ndarray,
    measure: DissimilarityMeasure,
    rows: np.ndarray,
    cols: np.ndarray,
    variances: Optional[np.ndarray] = None,
    validate: bool = True,
) -> np.ndarray:
    """
    Dissimilarities d(x_rows[i], x_cols[i]) for lists of index pairs.

    The row point is the first argument under ``Direction.P_TO_Q``; pairs
    with equal indices are exactly zero.
    """
    X = np.asarray(X, dtype=float)
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    if rows.shape != cols.shape:
        raise DimensionMismatchError("rows and cols must have equal length")
    if validate:
        validate_points(X, measure, variances)

    ordered = _OrderedTerms(X, measure, variances)
    out = np.empty(rows.size)
    for start in range(0, rows.size, PAIR_BLOCK):
        a = rows[start : start + PAIR_BLOCK]
        b = cols[start : start + PAIR_BLOCK]
        if measure.is_symmetric and measure.direction != Direction.SYMMETRIC:
            values = ordered(a, b)
        elif measure.direction == Direction.P_TO_Q:
            values = ordered(a, b)
        elif measure.direction == Direction.Q_TO_P:
            values = ordered(b, a)
        else:
            values = 0.5 * (ordered(a, b) + ordered(b, a))
        out[start : start + PAIR_BLOCK] = values

    out[rows == cols] = 0.0
    negative = np.flatnonzero(out < 0)
    if negative.size:
        worst = negative[np.argmin(out[negative])]
        if out[worst] < NEGATIVE_FLOOR:
            raise InvalidInputError(
                f"dissimilarity evaluated to {out[worst]!r}", index=(int(rows[worst]), int(cols[worst]))
            )
        out[negative] = 0.0
    return out


def pairwise_dissimilarity(points: Points, measure: DissimilarityMeasure) -> np.ndarray:
    """
    Full P x P dissimilarity matrix.

    Args:
        points: A P x n matrix, a list of vectors or a list of GaussianPoints
        measure: The dissimilarity; ``direction`` orders asymmetric kinds

    Returns:
        Matrix M with M[p][q] = d(point_p, point_q) and an exactly zero diagonal
    """
    X, variances = as_point_batch(points)
    n_points = X.shape[0]
    if n_points < 2:
        raise InvalidInputError("at least two points are required")
    try:
        validate_points(X, measure, variances)
    except InvalidInputError as exc:
        p = exc.index if isinstance(exc.index, int) else 0
        raise InvalidInputError(str(exc), index=(p, 1 if p == 0 else 0)) from exc

    rows, cols = np.indices((n_points, n_points)).reshape(2, -1)
    values = pair_dissimilarities(X, measure, rows, cols, variances, validate=False)
    matrix = values.reshape(n_points, n_points)
    np.fill_diagonal(matrix, 0.0)
    logger.debug("computed %dx%d %s dissimilarities", n_points, n_points, measure.kind.value)
    return matrix


def power_distributions(X) -> np.ndarray:
    """Rows of ``X`` mapped to probability vectors x^2 / sum(x^2); all-zero rows become uniform."""
    power = np.asarray(X, dtype=float) ** 2
    totals = power.sum(axis=1, keepdims=True)
    uniform = np.full_like(power, 1.0 / power.shape[1])
    return np.where(totals > 0, power / np.where(totals > 0, totals, 1.0), uniform)
