"""
STRESS minimisation for RBF projection networks.

The STRESS compares, over pairs q < p, each input dissimilarity with the
corresponding latent discrepancy. Training adjusts only the output weights
W; centres and widths stay fixed. The optimiser is gradient descent with a
backtracking line search and Barzilai-Borwein step lengths, so every
accepted step lowers the STRESS.
"""

import logging
from typing import List, Optional, Tuple

import numpy as np

from .divergence import (
    PROBABILITY_FLOOR,
    Points,
    as_point_batch,
    pair_dissimilarities,
)
from .errors import DimensionMismatchError, InvalidInputError, NonConvergenceError
from .models import (
    Deviation,
    Direction,
    GaussianPoint,
    LatentProjection,
    MeasureKind,
    RbfModel,
    StressConfig,
    TrainedProjection,
)
from .rbf import activations, forward_batch, jacobian, jacobians, radial_derivative_factors

logger = logging.getLogger(__name__)

MAX_HALVINGS = 30
PATIENCE = 5
MAX_STEP_GROWTH = 100.0
# A failed first line search is only an error above this stress.
NEGLIGIBLE_STRESS = 1e-20


# ---------------------------------------------------------------------------
# STRESS
# ---------------------------------------------------------------------------


def _pair_stress(target: np.ndarray, latent: np.ndarray, deviation: Deviation) -> float:
    if deviation == Deviation.SQUARED_ERROR:
        return float(np.sum((target - latent) ** 2))
    t = np.maximum(target, PROBABILITY_FLOOR)
    d = np.maximum(latent, PROBABILITY_FLOOR)
    return float(np.sum(t * np.log(t / d) - t + d))


def _deviation_slope(target: np.ndarray, latent: np.ndarray, deviation: Deviation) -> np.ndarray:
    """Derivative of each pair's deviation with respect to the latent value."""
    if deviation == Deviation.SQUARED_ERROR:
        return -2.0 * (target - latent)
    t = np.maximum(target, PROBABILITY_FLOOR)
    d = np.maximum(latent, PROBABILITY_FLOOR)
    return 1.0 - t / d


def stress(target, latent, deviation: Deviation = Deviation.SQUARED_ERROR) -> float:
    """
    STRESS between two P x P dissimilarity matrices.

    Only the strictly lower triangles are read.

    Args:
        target: Input-space dissimilarities
        latent: Latent-space discrepancies
        deviation: Squared error, or the x log x Bregman divergence d_F(target || latent)

    Returns:
        The non-negative STRESS
    """
    target = np.asarray(target, dtype=float)
    latent = np.asarray(latent, dtype=float)
    if target.ndim != 2 or target.shape[0] != target.shape[1]:
        raise DimensionMismatchError("target must be a square matrix")
    if latent.shape != target.shape:
        raise DimensionMismatchError(f"latent shape {latent.shape} differs from {target.shape}")
    rows, cols = np.tril_indices(target.shape[0], k=-1)
    t, d = target[rows, cols], latent[rows, cols]
    bad = np.flatnonzero(~np.isfinite(t) | ~np.isfinite(d))
    if bad.size:
        raise InvalidInputError("non-finite dissimilarity", index=(int(rows[bad[0]]), int(cols[bad[0]])))
    return _pair_stress(t, d, deviation)


def sample_pairs(n_points: int, n_pairs: int, seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Distinct pairs (p, q) with p > q, drawn without replacement and sorted."""
    total = n_points * (n_points - 1) // 2
    if n_pairs >= total:
        return np.tril_indices(n_points, k=-1)
    rng = np.random.default_rng(seed)
    k = np.sort(rng.choice(total, size=n_pairs, replace=False))
    # Invert k = p (p - 1) / 2 + q, then correct float rounding.
    p = ((1 + np.sqrt(1 + 8 * k.astype(float))) // 2).astype(np.int64)
    p = np.where(p * (p - 1) // 2 > k, p - 1, p)
    p = np.where((p + 1) * p // 2 <= k, p + 1, p)
    return p, k - p * (p - 1) // 2


def training_pairs(n_points: int, cfg: StressConfig) -> Tuple[np.ndarray, np.ndarray]:
    if n_points > cfg.full_pairs_limit:
        logger.info("sampling %d of %d pairs", cfg.sampled_pairs, n_points * (n_points - 1) // 2)
        return sample_pairs(n_points, cfg.sampled_pairs, cfg.seed)
    return np.tril_indices(n_points, k=-1)


# ---------------------------------------------------------------------------
# Objective and gradient
# ---------------------------------------------------------------------------


class StressObjective:
    """STRESS and its gradient with respect to the weights of a fixed network."""

    def __init__(
        self,
        model: RbfModel,
        X: np.ndarray,
        variances: Optional[np.ndarray],
        cfg: StressConfig,
        rows: np.ndarray,
        cols: np.ndarray,
        targets: np.ndarray,
    ):
        self.model = model
        self.X = X
        self.input_variances = variances
        self.cfg = cfg
        self.rows, self.cols = rows, cols
        self.targets = targets
        self.phi = activations(model, X)
        self.gaussian_latent = cfg.latent_measure.kind == MeasureKind.GAUSSIAN_KL
        if self.gaussian_latent:
            if variances is None:
                raise InvalidInputError("a gaussian_kl latent measure needs Gaussian inputs")
            self.variances = np.asarray(variances, dtype=float)
            self.beta = radial_derivative_factors(model, X)

    def latent_variances(self, W: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Floored and raw propagated variances for weights ``W``."""
        J = jacobians(self.model.with_weights(W), self.X)
        raw = self.variances * np.sum(J**2, axis=(1, 2)) / W.shape[0]
        return np.maximum(raw, PROBABILITY_FLOOR), raw

    def evaluate(self, W: np.ndarray, with_gradient: bool = True) -> Tuple[float, Optional[np.ndarray]]:
        Y = self.phi @ W.T
        s = raw_s = None
        if self.gaussian_latent:
            s, raw_s = self.latent_variances(W)
        latent = pair_dissimilarities(
            Y, self.cfg.latent_measure, self.rows, self.cols, variances=s, validate=False
        )
        value = _pair_stress(self.targets, latent, self.cfg.deviation)
        if not with_gradient:
            return value, None

        slope = _deviation_slope(self.targets, latent, self.cfg.deviation)
        grad_Y = np.zeros_like(Y)
        if not self.gaussian_latent:
            coeff = np.divide(slope, latent, out=np.zeros_like(latent), where=latent > 0)
            contrib = coeff[:, None] * (Y[self.rows] - Y[self.cols])
            np.add.at(grad_Y, self.rows, contrib)
            np.add.at(grad_Y, self.cols, -contrib)
            return value, grad_Y.T @ self.phi

        grad_s = np.zeros(Y.shape[0])
        for a, b, weight in self._ordered_terms():
            self._accumulate_kl(Y, s, a, b, weight * slope, grad_Y, grad_s)
        grad_s[raw_s < PROBABILITY_FLOOR] = 0.0
        return value, grad_Y.T @ self.phi + self._variance_gradient(W, grad_s)

    def _ordered_terms(self):
        direction = self.cfg.latent_measure.direction
        if direction == Direction.P_TO_Q:
            return [(self.rows, self.cols, 1.0)]
        if direction == Direction.Q_TO_P:
            return [(self.cols, self.rows, 1.0)]
        return [(self.rows, self.cols, 0.5), (self.cols, self.rows, 0.5)]

    @staticmethod
    def _accumulate_kl(Y, s, a, b, upstream, grad_Y, grad_s) -> None:
        # Partial derivatives of KL(N(y_a, s_a I) || N(y_b, s_b I)).
        m = Y.shape[1]
        delta = Y[b] - Y[a]
        sq = np.sum(delta**2, axis=1)
        sa, sb = s[a], s[b]
        gy = (upstream / sb)[:, None] * delta
        np.add.at(grad_Y, a, -gy)
        np.add.at(grad_Y, b, gy)
        np.add.at(grad_s, a, upstream * 0.5 * m * (1.0 / sb - 1.0 / sa))
        np.add.at(grad_s, b, upstream * 0.5 * (-m * sa / sb**2 - sq / sb**2 + m / sb))

    def _variance_gradient(self, W: np.ndarray, grad_s: np.ndarray) -> np.ndarray:
        m = W.shape[0]
        J = jacobians(self.model.with_weights(W), self.X)
        c = grad_s * self.variances / m
        Jx = np.einsum("pln,pn->pl", J, self.X)
        JC = J @ self.model.centers.T
        term_x = (c[:, None] * Jx).T @ self.beta
        term_c = np.einsum("p,pk,plk->lk", c, self.beta, JC)
        return 2.0 * (term_x - term_c)


def _prepare(inputs: Points, cfg: StressConfig, model: RbfModel, targets=None):
    X, variances = as_point_batch(inputs)
    n_points = X.shape[0]
    if n_points < 3:
        raise InvalidInputError("training needs at least three points")
    if X.shape[1] != model.input_dim:
        raise DimensionMismatchError(f"inputs have {X.shape[1]} columns, network expects {model.input_dim}")
    rows, cols = training_pairs(n_points, cfg)
    if targets is None:
        t = pair_dissimilarities(X, cfg.input_measure, rows, cols, variances)
    else:
        targets = np.asarray(targets, dtype=float)
        if targets.shape != (n_points, n_points):
            raise DimensionMismatchError(f"targets must be {n_points} x {n_points}")
        t = targets[rows, cols]
        bad = np.flatnonzero(~np.isfinite(t))
        if bad.size:
            raise InvalidInputError("non-finite target", index=(int(rows[bad[0]]), int(cols[bad[0]])))
    return StressObjective(model, X, variances, cfg, rows, cols, t)


def weight_gradient(
    inputs: Points, cfg: StressConfig, model: RbfModel, targets=None
) -> Tuple[float, np.ndarray]:
    """STRESS of ``model`` on ``inputs`` and its gradient with respect to the weights."""
    objective = _prepare(inputs, cfg, model, targets)
    return objective.evaluate(np.array(model.weights))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def train(
    inputs: Points, cfg: StressConfig, model_init: RbfModel, targets=None
) -> TrainedProjection:
    """
    Fit the weights of ``model_init`` to minimise the STRESS.

    Args:
        inputs: P x n matrix, vectors, or GaussianPoints (needed for a
            gaussian_kl input or latent measure)
        cfg: Measures, deviation and optimiser settings
        model_init: Starting network; its centres and widths are kept
        targets: Optional precomputed P x P input dissimilarities, used in
            place of ``cfg.input_measure``

    Returns:
        The trained network, latent points and the STRESS history (initial
        value first)

    Raises:
        NonConvergenceError: If no decreasing step exists on the first iteration
    """
    objective = _prepare(inputs, cfg, model_init, targets)
    W = np.array(model_init.weights)
    value, grad = objective.evaluate(W)
    history: List[float] = [value]
    logger.info("training on %d pairs, initial stress %.6g", objective.rows.size, value)

    alpha = None
    quiet = 0
    for iteration in range(cfg.max_iters):
        grad_norm = float(np.linalg.norm(grad))
        if value == 0.0 or grad_norm == 0.0:
            logger.info("stationary point reached at iteration %d", iteration)
            break
        if alpha is None:
            scale = float(np.linalg.norm(W))
            alpha = cfg.step_size * (scale if scale > 0 else 1.0) / grad_norm

        accepted = False
        for _ in range(MAX_HALVINGS + 1):
            W_try = W - alpha * grad
            trial, _ = objective.evaluate(W_try, with_gradient=False)
            if np.isfinite(trial) and trial < value:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            if iteration == 0 and value > NEGLIGIBLE_STRESS:
                raise NonConvergenceError("no decreasing step on the first iteration", stress=value)
            logger.info("line search exhausted at iteration %d; stopping", iteration)
            break

        _, grad_new = objective.evaluate(W_try)
        step = W_try - W
        change = grad_new - grad
        curvature = float(np.vdot(step, change))
        proposed = float(np.vdot(step, step)) / curvature if curvature > 0 else 2.0 * alpha
        relative = (value - trial) / value

        W, grad, value = W_try, grad_new, trial
        alpha = min(proposed, MAX_STEP_GROWTH * alpha)
        history.append(value)
        logger.debug("iteration %d: stress %.10g, step %.3g", iteration + 1, value, alpha)

        quiet = quiet + 1 if relative < cfg.tolerance else 0
        if quiet >= PATIENCE:
            logger.info("converged after %d iterations", iteration + 1)
            break

    model = model_init.with_weights(W)
    X = objective.X
    latent_vars = None
    if objective.input_variances is not None:
        latent_vars = latent_variances(model, X, objective.input_variances)
    logger.info("final stress %.6g after %d accepted steps", value, len(history) - 1)
    return TrainedProjection(
        model=model,
        latent_points=forward_batch(model, X),
        latent_variances=latent_vars,
        stress_history=history,
        n_pairs=int(objective.rows.size),
    )


# ---------------------------------------------------------------------------
# Projection and uncertainty
# ---------------------------------------------------------------------------


def propagate_uncertainty(model: RbfModel, point: GaussianPoint) -> float:
    """Latent variance v ||J||_F^2 / m of a Gaussian input, floored at 1e-15."""
    if point.dimension != model.input_dim:
        raise DimensionMismatchError(f"expected dimension {model.input_dim}, got {point.dimension}")
    J = jacobian(model, point.mean)
    if not np.all(np.isfinite(J)):
        raise InvalidInputError("Jacobian is not finite")
    return max(point.variance * float(np.sum(J**2)) / model.latent_dim, PROBABILITY_FLOOR)


def latent_variances(model: RbfModel, X, variances) -> np.ndarray:
    """Vectorised ``propagate_uncertainty`` over the rows of ``X``."""
    J = jacobians(model, X)
    if not np.all(np.isfinite(J)):
        raise InvalidInputError("Jacobian is not finite")
    out = np.asarray(variances, dtype=float) * np.sum(J**2, axis=(1, 2)) / model.latent_dim
    return np.maximum(out, PROBABILITY_FLOOR)


def project(model: RbfModel, inputs: Points) -> LatentProjection:
    """Map new inputs through a trained network; Gaussian inputs also get variances."""
    X, variances = as_point_batch(inputs)
    points = forward_batch(model, X)
    if variances is None:
        return LatentProjection(points=points)
    return LatentProjection(points=points, variances=latent_variances(model, X, variances))


def centroid_spread(points, percentile: float = 99.0) -> float:
    """Percentile of the distances of latent points from their centroid."""
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[0] == 0:
        raise InvalidInputError("points must be a non-empty P x m matrix")
    return float(np.percentile(np.linalg.norm(points - points.mean(axis=0), axis=1), percentile))
