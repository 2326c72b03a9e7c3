"""
Radial basis function network: activations, forward map, Jacobians and
initialisation.
"""

import logging
import math
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist, pdist
from sklearn.cluster import kmeans_plusplus
from sklearn.decomposition import PCA

from .errors import DimensionMismatchError, InvalidInputError
from .models import BasisKind, RbfModel

logger = logging.getLogger(__name__)


def _as_inputs(model: RbfModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise DimensionMismatchError(
            f"inputs must have {model.input_dim} columns, got shape {X.shape}"
        )
    bad = np.flatnonzero(~np.isfinite(X).all(axis=1))
    if bad.size:
        raise InvalidInputError("inputs must be finite", index=int(bad[0]))
    return X


def _basis(kind: BasisKind, r2: np.ndarray, widths: np.ndarray) -> np.ndarray:
    if kind == BasisKind.GAUSSIAN:
        return np.exp(-r2 / (2.0 * widths**2))
    # (r/w)^2 ln(r/w) written in terms of s2 = (r/w)^2; zero at the centre.
    s2 = r2 / widths**2
    out = np.zeros_like(s2)
    positive = s2 > 0
    out[positive] = 0.5 * s2[positive] * np.log(s2[positive])
    return out


def activations(model: RbfModel, X) -> np.ndarray:
    """Basis activations phi_k(x_p) as a P x K matrix."""
    X = _as_inputs(model, X)
    r2 = cdist(X, model.centers, "sqeuclidean")
    return _basis(model.basis_kind, r2, model.widths)


def forward(model: RbfModel, x) -> np.ndarray:
    """Latent image W phi(x) of a single input vector."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionMismatchError("forward takes a single input vector")
    return model.weights @ activations(model, x)[0]


def forward_batch(model: RbfModel, X) -> np.ndarray:
    return activations(model, X) @ model.weights.T


def latent_sq_distance(model: RbfModel, x_p, x_q) -> float:
    """||W (phi(x_q) - phi(x_p))||^2."""
    phi = activations(model, np.vstack([np.asarray(x_p, float), np.asarray(x_q, float)]))
    v = model.weights @ (phi[1] - phi[0])
    return float(v @ v)


def radial_derivative_factors(model: RbfModel, X) -> np.ndarray:
    """Factors b_pk with d phi_k / d x evaluated at x_p equal to b_pk (x_p - mu_k)."""
    X = _as_inputs(model, X)
    r2 = cdist(X, model.centers, "sqeuclidean")
    w2 = model.widths**2
    if model.basis_kind == BasisKind.GAUSSIAN:
        return -np.exp(-r2 / (2.0 * w2)) / w2
    s2 = r2 / w2
    out = np.zeros_like(s2)
    positive = s2 > 0
    factor = (np.log(np.where(positive, s2, 1.0)) + 1.0) / w2
    out[positive] = factor[positive]
    return out


def jacobians(model: RbfModel, X) -> np.ndarray:
    """Jacobians of the forward map at each input, as a P x m x n array."""
    X = _as_inputs(model, X)
    beta = radial_derivative_factors(model, X)
    W = model.weights
    u = beta @ W.T
    centred = (beta[:, None, :] * W[None, :, :]) @ model.centers
    return u[:, :, None] * X[:, None, :] - centred


def jacobian(model: RbfModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionMismatchError("jacobian takes a single input vector")
    return jacobians(model, x)[0]


def default_n_centers(n_points: int, latent_dim: int) -> int:
    if n_points < 2:
        return max(n_points, 1)
    return min(n_points, 10 * latent_dim * math.ceil(math.log2(n_points)))


def median_width(centers: np.ndarray) -> float:
    """Median pairwise distance between centres, or 1.0 when that is zero."""
    if centers.shape[0] < 2:
        return 1.0
    width = float(np.median(pdist(centers)))
    if not width > 0:
        logger.warning("centres coincide; falling back to unit basis width")
        return 1.0
    return width


def init_model(
    X,
    latent_dim: int = 2,
    n_centers: Optional[int] = None,
    basis_kind: BasisKind = BasisKind.GAUSSIAN,
    width: Optional[float] = None,
    seed: int = 0,
    init: str = "pca",
) -> RbfModel:
    """
    Build an untrained network for the inputs ``X``.

    Centres are chosen by k-means++ seeding, widths default to the median
    centre spacing. With ``init="pca"`` the weights are the least-squares fit
    of the network to the leading principal components of ``X``; with
    ``init="random"`` they are small Gaussian draws.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise InvalidInputError("init_model needs a P x n input matrix with P >= 2")
    if latent_dim not in (1, 2, 3):
        raise InvalidInputError("latent dimension must be 1, 2 or 3")
    if init not in ("pca", "random"):
        raise InvalidInputError(f"unknown initialisation '{init}'")
    n_points = X.shape[0]
    if n_centers is None:
        n_centers = default_n_centers(n_points, latent_dim)
    if not 1 <= n_centers <= n_points:
        raise InvalidInputError(f"n_centers must be between 1 and {n_points}")

    centers, _ = kmeans_plusplus(X, n_clusters=n_centers, random_state=seed)
    widths = float(width) if width is not None else median_width(centers)
    placeholder = RbfModel(
        centers=centers,
        widths=widths,
        weights=np.zeros((latent_dim, n_centers)),
        basis_kind=basis_kind,
    )

    if init == "random":
        rng = np.random.default_rng(seed)
        weights = rng.normal(scale=1e-2, size=(latent_dim, n_centers))
    else:
        n_components = min(latent_dim, X.shape[1], n_points)
        scores = PCA(n_components=n_components, svd_solver="full").fit_transform(X)
        if n_components < latent_dim:
            scores = np.hstack([scores, np.zeros((n_points, latent_dim - n_components))])
        phi = activations(placeholder, X)
        weights = np.linalg.lstsq(phi, scores, rcond=None)[0].T

    logger.info(
        "initialised %s network: %d centres, width %.4g, latent dim %d (%s)",
        basis_kind.value, n_centers, widths, latent_dim, init,
    )
    return placeholder.with_weights(weights)
