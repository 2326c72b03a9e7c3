import os
import sys
import numpy as np
import pytest
from scipy.spatial.distance import cdist

# Add the repository root to path to import the backend
sys.path.append(os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))))
from backend.app.divergence import pairwise_dissimilarity
from backend.app.errors import DimensionMismatchError, InvalidInputError
from backend.app.models import (
    Deviation,
    Direction,
    DissimilarityMeasure,
    GaussianPoint,
    MeasureKind,
    RbfModel,
    StressConfig,
)
from backend.app.rbf import activations, forward_batch, init_model, jacobian
from backend.app.trainer import (
    centroid_spread,
    latent_variances,
    project,
    propagate_uncertainty,
    sample_pairs,
    stress,
    train,
    weight_gradient,
)

GAUSSIAN_KL = DissimilarityMeasure(kind=MeasureKind.GAUSSIAN_KL)


def _gaussian_points(rng, n_points=8, dim=3):
    return [
        GaussianPoint(mean=rng.normal(size=dim), variance=float(rng.uniform(0.2, 0.8)))
        for _ in range(n_points)
    ]


def _assert_non_increasing(result):
    history = np.array(result.stress_history)
    assert np.all(np.diff(history) <= 0)
    assert result.final_stress <= history[0]


def _numeric_gradient(inputs, cfg, model, h=1e-6):
    W = np.array(model.weights)
    grad = np.zeros_like(W)
    for index in np.ndindex(*W.shape):
        up, down = W.copy(), W.copy()
        up[index] += h
        down[index] -= h
        grad[index] = (
            weight_gradient(inputs, cfg, model.with_weights(up))[0]
            - weight_gradient(inputs, cfg, model.with_weights(down))[0]
        ) / (2 * h)
    return grad


def test_stress_single_pair():
    assert stress([[0.0, 3.0], [3.0, 0.0]], [[0.0, 1.0], [1.0, 0.0]]) == pytest.approx(4.0)


def test_stress_reads_lower_triangle_only():
    target = np.array([[0.0, 99.0, 99.0], [1.0, 0.0, 99.0], [2.0, 3.0, 0.0]])
    latent = np.array([[0.0, 0.0, 0.0], [1.5, 0.0, 0.0], [2.0, 1.0, 0.0]])
    assert stress(target, latent) == pytest.approx(0.25 + 0.0 + 4.0)


def test_stress_xlogx_deviation():
    """Targets 1, 2, 3 against unit latents give 0 + (2 ln 2 - 1) + (3 ln 3 - 2)."""
    target = np.array([[0.0, 1.0, 2.0], [1.0, 0.0, 3.0], [2.0, 3.0, 0.0]])
    latent = np.ones((3, 3)) - np.eye(3)
    expected = (2 * np.log(2) - 1) + (3 * np.log(3) - 2)
    assert stress(target, latent, Deviation.BREGMAN_XLOGX) == pytest.approx(expected)
    assert expected == pytest.approx(1.6822, abs=1e-4)


@pytest.mark.parametrize("deviation", list(Deviation))
def test_stress_of_perfect_fit_is_zero(rng, deviation):
    X = rng.normal(size=(6, 2))
    D = cdist(X, X)
    assert stress(D, D, deviation) == pytest.approx(0.0, abs=1e-12)


def test_stress_rejects_bad_matrices():
    with pytest.raises(DimensionMismatchError):
        stress(np.zeros((3, 3)), np.zeros((2, 2)))
    with pytest.raises(InvalidInputError) as exc:
        stress(np.array([[0.0, 0.0], [np.nan, 0.0]]), np.zeros((2, 2)))
    assert exc.value.index == (1, 0)


def test_sample_pairs_are_distinct_and_ordered():
    rows, cols = sample_pairs(50, 300, seed=4)
    assert rows.size == 300
    assert np.all(rows > cols) and np.all(cols >= 0) and np.all(rows < 50)
    assert len(set(zip(rows.tolist(), cols.tolist()))) == 300
    again = sample_pairs(50, 300, seed=4)
    np.testing.assert_array_equal(rows, again[0])


def test_sample_pairs_returns_all_when_asked_for_more():
    rows, cols = sample_pairs(6, 100)
    assert rows.size == 15


@pytest.mark.parametrize(
    "cfg",
    [
        StressConfig(),
        StressConfig(input_measure=DissimilarityMeasure.from_name("sqeuclidean")),
        StressConfig(deviation=Deviation.BREGMAN_XLOGX),
    ],
)
def test_gradient_matches_finite_differences(rng, cfg):
    """Analytic weight gradient agrees with central differences."""
    X = rng.normal(size=(9, 3))
    model = init_model(X, latent_dim=2, n_centers=5, seed=1, init="random")
    model = model.with_weights(rng.normal(size=(2, 5)))
    _, grad = weight_gradient(X, cfg, model)
    np.testing.assert_allclose(grad, _numeric_gradient(X, cfg, model), rtol=1e-4, atol=1e-6)


@pytest.mark.parametrize("direction", list(Direction))
def test_gradient_with_gaussian_latent_matches_finite_differences(rng, direction):
    """Gaussian latent points propagate input variance; the gradient covers both terms."""
    points = _gaussian_points(rng)
    X = np.array([p.mean for p in points])
    model = init_model(X, latent_dim=2, n_centers=6, seed=2)
    model = model.with_weights(rng.normal(size=(2, 6)))
    cfg = StressConfig(
        input_measure=GAUSSIAN_KL,
        latent_measure=DissimilarityMeasure(kind=MeasureKind.GAUSSIAN_KL, direction=direction),
    )
    _, grad = weight_gradient(points, cfg, model)
    np.testing.assert_allclose(grad, _numeric_gradient(points, cfg, model), rtol=1e-4, atol=1e-6)


def test_training_never_increases_stress(rng):
    X = rng.normal(size=(30, 6))
    model = init_model(X, latent_dim=2, n_centers=12, seed=0, init="random")
    result = train(X, StressConfig(max_iters=60), model)
    history = np.array(result.stress_history)
    assert len(history) > 1
    assert np.all(np.diff(history) < 0)
    assert result.latent_points.shape == (30, 2)
    assert result.latent_variances is None


def _classical_scaling(X, m):
    """Classical MDS configuration from the doubly-centred squared distances."""
    n = X.shape[0]
    centring = np.eye(n) - np.ones((n, n)) / n
    B = -0.5 * centring @ cdist(X, X, "sqeuclidean") @ centring
    eigenvalues, eigenvectors = np.linalg.eigh(B)
    top = np.argsort(eigenvalues)[::-1][:m]
    return eigenvectors[:, top] * np.sqrt(np.maximum(eigenvalues[top], 0.0))


def _interpolating_model(X, latent_dim):
    """Centres on every point with narrow widths, so activations are close to the identity."""
    width = 0.25 * float(np.min(cdist(X, X) + np.diag(np.full(X.shape[0], np.inf))))
    return init_model(X, latent_dim=latent_dim, n_centers=X.shape[0], width=width)


def test_training_beats_classical_scaling(rng):
    """50 random 10-D points: the trained 2-D STRESS does not exceed the classical MDS STRESS."""
    X = rng.normal(size=(50, 10))
    mds = _classical_scaling(X, 2)
    baseline = stress(cdist(X, X), cdist(mds, mds))
    model = _interpolating_model(X, 2)
    result = train(X, StressConfig(max_iters=200), model)
    _assert_non_increasing(result)
    assert result.final_stress <= baseline * (1 + 1e-6)


def test_training_recovers_an_affine_subspace(rng):
    """Points on a 2-D plane in 6-D are embedded almost exactly."""
    basis = np.linalg.qr(rng.normal(size=(6, 2)))[0]
    X = rng.normal(size=(30, 2)) * 3.0 @ basis.T + rng.normal(size=6)
    scores = _classical_scaling(X, 2)
    model = _interpolating_model(X, 2)
    W = np.linalg.lstsq(activations(model, X), 0.3 * scores, rcond=None)[0].T
    model = model.with_weights(W)
    result = train(X, StressConfig(max_iters=500, tolerance=1e-12), model)
    _assert_non_increasing(result)
    assert result.final_stress <= 1e-3 * result.stress_history[0]


def test_exact_fit_is_a_stationary_point(rng):
    """When the latent distances already equal the targets, training stops at once."""
    X = rng.normal(size=(10, 3))
    model = init_model(X, latent_dim=2, n_centers=10, seed=0)
    targets = pairwise_dissimilarity(forward_batch(model, X), DissimilarityMeasure())
    _, grad = weight_gradient(X, StressConfig(), model, targets=targets)
    assert np.all(grad == 0.0)
    result = train(X, StressConfig(), model, targets=targets)
    assert result.stress_history == [0.0]
    np.testing.assert_array_equal(result.model.weights, model.weights)


def test_training_on_gaussian_points_reports_latent_variances(rng):
    points = _gaussian_points(rng, n_points=12)
    X = np.array([p.mean for p in points])
    model = init_model(X, latent_dim=2, n_centers=6, seed=0)
    cfg = StressConfig(input_measure=GAUSSIAN_KL, latent_measure=GAUSSIAN_KL, max_iters=30)
    result = train(points, cfg, model)
    assert result.latent_variances.shape == (12,)
    assert np.all(result.latent_variances > 0)
    _assert_non_increasing(result)


def test_gaussian_latent_needs_gaussian_inputs(rng):
    X = rng.normal(size=(6, 2))
    model = init_model(X, latent_dim=1, n_centers=3)
    with pytest.raises(InvalidInputError):
        train(X, StressConfig(latent_measure=GAUSSIAN_KL), model)


def test_sampled_pairs_above_limit(rng):
    X = rng.normal(size=(12, 3))
    model = init_model(X, latent_dim=2, n_centers=6)
    cfg = StressConfig(full_pairs_limit=10, sampled_pairs=20, max_iters=3)
    assert train(X, cfg, model).n_pairs == 20
    assert train(X, StressConfig(max_iters=3), model).n_pairs == 66


def test_training_input_checks(rng):
    X = rng.normal(size=(5, 3))
    model = init_model(X, latent_dim=2, n_centers=3)
    with pytest.raises(InvalidInputError):
        train(X[:2], StressConfig(), model)
    with pytest.raises(DimensionMismatchError):
        train(X[:, :2], StressConfig(), model)
    with pytest.raises(DimensionMismatchError):
        train(X, StressConfig(), model, targets=np.zeros((4, 4)))


def test_propagate_uncertainty(rng):
    """Latent variance is v ||J||_F^2 / m, the same one point at a time or batched."""
    model = RbfModel(centers=rng.normal(size=(4, 3)), widths=1.0, weights=rng.normal(size=(2, 4)))
    point = GaussianPoint(mean=rng.normal(size=3), variance=0.3)
    J = jacobian(model, point.mean)
    expected = 0.3 * np.sum(J**2) / 2
    assert propagate_uncertainty(model, point) == pytest.approx(expected)
    batched = latent_variances(model, point.mean[None, :], [0.3])
    assert batched[0] == pytest.approx(expected)
    with pytest.raises(DimensionMismatchError):
        propagate_uncertainty(model, GaussianPoint(mean=[0.0, 1.0], variance=1.0))


def test_project(rng):
    model = RbfModel(centers=rng.normal(size=(4, 3)), widths=1.0, weights=rng.normal(size=(3, 4)))
    X = rng.normal(size=(7, 3))
    plain = project(model, X)
    assert plain.points.shape == (7, 3)
    assert plain.variances is None
    gaussian = project(model, [GaussianPoint(mean=x, variance=0.1) for x in X])
    np.testing.assert_allclose(gaussian.points, plain.points)
    assert gaussian.variances.shape == (7,)


def test_centroid_spread():
    points = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 2.0], [0.0, -2.0]])
    assert centroid_spread(points, 100) == pytest.approx(2.0)
    assert centroid_spread(points, 0) == pytest.approx(1.0)
    with pytest.raises(InvalidInputError):
        centroid_spread(np.zeros((0, 2)))


def test_propagate_uncertainty_edge_cases(rng):
    """Zero weights give the floored variance; the variance is linear in the input variance."""
    centers = rng.normal(size=(4, 3))
    flat = RbfModel(centers=centers, widths=1.0, weights=np.zeros((2, 4)))
    point = GaussianPoint(mean=rng.normal(size=3), variance=0.5)
    assert propagate_uncertainty(flat, point) == 1e-15

    model = flat.with_weights(rng.normal(size=(2, 4)))
    doubled = GaussianPoint(mean=point.mean, variance=1.0)
    assert propagate_uncertainty(model, doubled) == 2 * propagate_uncertainty(model, point)


def test_projecting_the_training_set_reproduces_latent_points(rng):
    X = rng.normal(size=(15, 4))
    result = train(X, StressConfig(max_iters=20), init_model(X, latent_dim=2, n_centers=6))
    _assert_non_increasing(result)
    first = project(result.model, X)
    np.testing.assert_allclose(first.points, result.latent_points, atol=1e-10)
    np.testing.assert_array_equal(project(result.model, X).points, first.points)


def test_projecting_a_centre(rng):
    """A point on a centre is mapped to the hand-evaluated weighted sum of basis values."""
    model = RbfModel(centers=rng.normal(size=(3, 2)), widths=[0.7, 1.1, 1.9], weights=rng.normal(size=(2, 3)))
    x = model.centers[1]
    expected = np.zeros(2)
    for k in range(3):
        r2 = float(np.sum((x - model.centers[k]) ** 2))
        expected += model.weights[:, k] * np.exp(-r2 / (2 * model.widths[k] ** 2))
    np.testing.assert_allclose(project(model, x[None, :]).points[0], expected, rtol=1e-12)


@pytest.mark.parametrize("deviation", list(Deviation))
def test_stress_is_invariant_under_rigid_motion(rng, deviation):
    """Rotating and translating the latent points leaves STRESS unchanged."""
    X = rng.normal(size=(25, 6))
    Y = rng.normal(size=(25, 3))
    rotation, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    moved = Y @ rotation.T + rng.normal(size=3)
    target = cdist(X, X)
    before = stress(target, cdist(Y, Y), deviation)
    after = stress(target, cdist(moved, moved), deviation)
    assert after == pytest.approx(before, rel=1e-10)
