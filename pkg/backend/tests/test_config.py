import os
import sys
import pytest

# Add the repository root to path to import the backend
sys.path.append(os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))))
from backend.app.config import (
    DEFAULT_CONFIG,
    PipelineConfig,
    TrainStage,
    load_pipeline_config,
    merge_overrides,
)
from backend.app.errors import ConfigError
from backend.app.models import Deviation, Direction, MeasureKind


def test_defaults_describe_the_desk_scenario():
    """Default configuration is 64 beams at 4096 Hz with three targets."""
    cfg = PipelineConfig()
    assert cfg.simulate.n_beams == 64
    assert cfg.simulate.sample_rate_hz == 4096.0
    assert len(cfg.simulate.targets) == 3
    assert cfg.filter.window_length == 64
    assert cfg.filter.n_components == 16
    assert cfg.filter.flatness_threshold == 0.5
    assert cfg.cluster.z_threshold == 6.0
    assert DEFAULT_CONFIG["train"]["measure"] == "euclidean"


def test_namespaced_keys(tmp_path):
    """Dotted keys such as simulate.n_beams address the stage sections."""
    path = tmp_path / "sonarscale.toml"
    path.write_text('seed = 4\nsimulate.n_beams = 16\nsimulate.targets = []\ntrain.measure = "kl"\n')
    cfg = load_pipeline_config(str(path))
    assert cfg.seed == 4
    assert cfg.simulate.n_beams == 16
    assert cfg.simulate.targets == []
    assert cfg.train.input_measure().kind == MeasureKind.BREGMAN


def test_json_configuration(tmp_path):
    path = tmp_path / "config.json"
    path.write_text('{"seed": 2, "paths": {"out_dir": "elsewhere"}}')
    cfg = load_pipeline_config(str(path))
    assert cfg.seed == 2
    assert cfg.paths.out_dir == "elsewhere"


def test_overrides_win(small_pipeline_toml):
    cfg = load_pipeline_config(str(small_pipeline_toml), {"seed": 9, "train": {"latent_dim": 3}})
    assert cfg.seed == 9
    assert cfg.train.latent_dim == 3
    assert cfg.train.n_centers == 12
    assert cfg.sim_config().seed == 9


def test_merge_overrides_is_deep():
    merged = merge_overrides({"a": {"b": 1, "c": 2}}, {"a": {"c": 3}})
    assert merged == {"a": {"b": 1, "c": 3}}


@pytest.mark.parametrize(
    "text",
    [
        "simulate.n_beams = 0\n",
        'train.measure = "cosine"\n',
        "train.latent_dim = 4\n",
        "filter.flatness_threshold = 1.5\n",
        "unknown_section.value = 1\n",
        "train.learning_rate = 0.1\n",
        "seed = -3\n",
        "simulate.n_beams = [\n",
    ],
)
def test_invalid_configuration(tmp_path, text):
    path = tmp_path / "bad.toml"
    path.write_text(text)
    with pytest.raises(ConfigError):
        load_pipeline_config(str(path))


def test_missing_configuration_file(tmp_path):
    with pytest.raises(ConfigError):
        load_pipeline_config(str(tmp_path / "absent.toml"))


def test_stress_config_from_train_stage():
    """The latent measure follows the input measure unless set explicitly."""
    gaussian = TrainStage(measure="gaussian-kl", direction=Direction.SYMMETRIC)
    cfg = gaussian.stress_config(seed=3)
    assert cfg.latent_measure.kind == MeasureKind.GAUSSIAN_KL
    assert cfg.input_measure.direction == Direction.SYMMETRIC
    assert cfg.seed == 3
    assert gaussian.uses_gaussian_points

    plain = TrainStage(measure="kl", deviation=Deviation.BREGMAN_XLOGX).stress_config(seed=0)
    assert plain.latent_measure.kind == MeasureKind.EUCLIDEAN
    assert plain.deviation == Deviation.BREGMAN_XLOGX
    assert not TrainStage().uses_gaussian_points
    assert TrainStage(gaussian_uncertainty=True).uses_gaussian_points


def test_embedding_from_filter_stage():
    embedding = PipelineConfig().filter.embedding(seed=5)
    assert embedding.seed == 5
    assert embedding.window_length == 64
    assert embedding.ica_tolerate_nonconvergence
