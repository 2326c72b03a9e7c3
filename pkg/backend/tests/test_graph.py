import os
import sys
import numpy as np
import pytest

# Add the repository root to path to import the backend
sys.path.append(os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))))
from backend.app.config import PipelineConfig, load_pipeline_config
from backend.app.errors import ArtifactError, StageError
from backend.app.graph import (
    ARTIFACT_NAMES,
    artifact_path,
    compare_spreads,
    create_graph,
    observation_inputs,
    run_pipeline,
    run_stage,
    stage_hashes,
    stage_names,
)
from backend.app.models import GaussianPoint
from backend.app.sonar_sim import target_beams
from backend.app.utils import load_model, read_csv, read_csv_provenance, read_signal


@pytest.fixture
def small_config(small_pipeline_toml):
    """The small pipeline configuration, loaded."""
    return load_pipeline_config(str(small_pipeline_toml))


def test_create_graph():
    """Test that the graph compiles."""
    assert create_graph() is not None
    assert stage_names() == ["simulate", "filter", "train", "project", "cluster"]


def test_stage_hashes_follow_upstream_sections(small_config):
    """Changing a section changes its own hash and everything downstream only."""
    base = stage_hashes(small_config)
    train_changed = stage_hashes(small_config.model_copy(update={"train": small_config.train.model_copy(update={"latent_dim": 3})}))
    assert train_changed["simulate"] == base["simulate"]
    assert train_changed["filter"] == base["filter"]
    assert train_changed["cluster"] == base["cluster"]
    assert train_changed["train"] != base["train"]
    assert train_changed["project"] != base["project"]

    reseeded = stage_hashes(small_config.model_copy(update={"seed": 6}))
    assert all(reseeded[name] != base[name] for name in base)


def test_cluster_hash_follows_its_source(small_config):
    """Raw-source clustering ignores the filter section; filtered-source clustering does not."""
    filter_changed = small_config.model_copy(
        update={"filter": small_config.filter.model_copy(update={"flatness_threshold": 0.3})}
    )
    assert small_config.cluster.source == "raw"
    assert stage_hashes(filter_changed)["cluster"] == stage_hashes(small_config)["cluster"]

    filtered = small_config.model_copy(update={"cluster": small_config.cluster.model_copy(update={"source": "filtered"})})
    filtered_changed = filter_changed.model_copy(update={"cluster": filtered.cluster})
    assert stage_hashes(filtered_changed)["cluster"] != stage_hashes(filtered)["cluster"]
    assert stage_hashes(filtered)["cluster"] != stage_hashes(small_config)["cluster"]


def test_cluster_stage_reads_the_filtered_signal_when_asked(small_config):
    cfg = small_config.model_copy(update={"cluster": small_config.cluster.model_copy(update={"source": "filtered"})})
    run_stage("simulate", cfg)
    with pytest.raises(StageError) as exc:
        run_stage("cluster", cfg)
    assert exc.value.stage == "cluster"
    run_stage("filter", cfg)
    assert run_stage("cluster", cfg).summaries[0].startswith("cluster:")


def test_observation_inputs():
    segment = np.array([[1.0, 0.0, 2.0], [1.0, 0.0, 0.0]])
    means, inputs = observation_inputs(segment, power=False, gaussian=False)
    np.testing.assert_array_equal(means, segment.T)
    assert inputs is means

    means, inputs = observation_inputs(segment, power=True, gaussian=True)
    np.testing.assert_allclose(means.sum(axis=1), 1.0)
    np.testing.assert_allclose(means[1], [0.5, 0.5])
    assert isinstance(inputs[0], GaussianPoint)
    assert inputs[0].variance == pytest.approx(1e-15)
    assert inputs[2].variance == pytest.approx(0.25)

    _, raw_inputs = observation_inputs(segment, power=False, gaussian=True)
    assert raw_inputs[2].variance == pytest.approx(1.0)
    assert raw_inputs[0].variance == pytest.approx(1e-15)


def test_pipeline_writes_every_artifact(small_config):
    """A full run writes all artifacts and one summary line per stage."""
    state = run_pipeline(small_config)
    assert [line.split(":")[0] for line in state.summaries] == stage_names()
    for name in ARTIFACT_NAMES:
        assert os.path.exists(artifact_path(small_config, name)), name
    assert set(state.artifacts) == set(ARTIFACT_NAMES)

    model, document = load_model(artifact_path(small_config, "model"))
    assert model.input_dim == 8
    assert model.latent_dim == 2
    assert document["provenance"]["config_hash"] == stage_hashes(small_config)["train"]
    assert document["extras"] == {"power_distribution": False, "gaussian_points": False}

    history = read_csv(artifact_path(small_config, "stress_history"))["stress"].to_numpy()
    assert np.all(np.diff(history) <= 0)

    coordinates = read_csv(artifact_path(small_config, "coordinates"))
    assert list(coordinates.columns) == ["sample", "y1", "y2"]
    assert len(coordinates) == 102

    cluster = read_csv(artifact_path(small_config, "cluster"))
    assert len(cluster) == 8
    assert read_csv_provenance(artifact_path(small_config, "cluster"))["stage"] == "cluster"

    filtered, _ = read_signal(artifact_path(small_config, "filtered"))
    assert filtered.data.shape == (8, 1024)


def test_pipeline_is_deterministic(small_config):
    """Re-running with the same configuration rewrites byte-identical results."""
    names = ["signal", "model", "stress_history", "coordinates", "cluster"]
    run_pipeline(small_config)
    first = {name: open(artifact_path(small_config, name), "rb").read() for name in names}
    run_pipeline(small_config)
    for name in names:
        assert open(artifact_path(small_config, name), "rb").read() == first[name], name


def test_pipeline_without_filter(small_config):
    cfg = small_config.model_copy(update={"filter": small_config.filter.model_copy(update={"enabled": False})})
    state = run_pipeline(cfg)
    assert [line.split(":")[0] for line in state.summaries] == ["simulate", "train", "project", "cluster"]
    assert not os.path.exists(artifact_path(cfg, "filtered"))


def test_gaussian_pipeline(small_config):
    """The gaussian-kl measure trains on Gaussian points and reports latent variances."""
    cfg = small_config.model_copy(
        update={"train": small_config.train.model_copy(update={"measure": "gaussian-kl", "max_iters": 10})}
    )
    run_pipeline(cfg)
    _, document = load_model(artifact_path(cfg, "model"))
    assert document["extras"]["gaussian_points"] is True
    coordinates = read_csv(artifact_path(cfg, "coordinates"))
    assert "variance" in coordinates.columns
    assert (coordinates["variance"] > 0).all()


def test_compare_spreads(small_config):
    """Euclidean and gaussian-kl training are compared on the same segments."""
    run_stage("simulate", small_config)
    signal, _ = read_signal(artifact_path(small_config, "signal"))
    spreads = compare_spreads(small_config, signal)
    assert set(spreads) == {"euclidean", "gaussian-kl"}
    assert all(np.isfinite(value) and value >= 0 for value in spreads.values())


def test_project_summary_reports_both_spreads(small_config):
    cfg = small_config.model_copy(update={"project": small_config.project.model_copy(update={"compare_spread": True})})
    state = run_pipeline(cfg)
    project_line = next(line for line in state.summaries if line.startswith("project:"))
    assert "euclidean" in project_line
    assert "gaussian-kl" in project_line


def test_stale_artifacts_are_refused(small_config):
    """A stage refuses artifacts from a different upstream configuration unless forced."""
    run_pipeline(small_config)
    changed = small_config.model_copy(update={"train": small_config.train.model_copy(update={"latent_dim": 3})})
    with pytest.raises(StageError) as exc:
        run_stage("project", changed)
    assert exc.value.stage == "project"
    assert isinstance(exc.value.cause, ArtifactError)

    state = run_stage("project", changed, force=True)
    assert state.summaries[0].startswith("project:")


def test_single_stages(small_config):
    """Stages can run one at a time in order."""
    for name in stage_names():
        state = run_stage(name, small_config)
        assert state.summaries[0].startswith(f"{name}:")


def test_stage_without_inputs_fails(small_config):
    with pytest.raises(StageError) as exc:
        run_stage("train", small_config)
    assert exc.value.stage == "train"
    with pytest.raises(ValueError):
        run_stage("report", small_config)


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(5))
def test_default_cluster_stage_flags_the_target_beams(tmp_path, seed):
    """With the default configuration the cluster stage flags exactly the beams the targets reach."""
    cfg = PipelineConfig(seed=seed, paths={"out_dir": str(tmp_path)})
    run_stage("simulate", cfg)
    run_stage("cluster", cfg)
    cluster = read_csv(artifact_path(cfg, "cluster"))
    flagged = cluster.loc[cluster["flagged"] == 1, "channel"].tolist()
    assert flagged == target_beams(cfg.sim_config())


@pytest.mark.slow
def test_desk_scenario_spread_comparison(tmp_path):
    """Both spreads on the default scenario are finite; the comparison itself is informational."""
    cfg = PipelineConfig(paths={"out_dir": str(tmp_path)})
    run_stage("simulate", cfg)
    signal, _ = read_signal(artifact_path(cfg, "signal"))
    spreads = compare_spreads(cfg, signal)
    assert np.isfinite(spreads["euclidean"])
    assert np.isfinite(spreads["gaussian-kl"])
