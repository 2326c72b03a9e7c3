import os
import sys
import numpy as np
import pytest
from fastapi.testclient import TestClient

# Add the repository root to path to import the backend
sys.path.append(os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))))
from backend.app.main import app
from backend.app.models import SimConfig, TargetSpec


@pytest.fixture
def test_client():
    """Create a test client for the FastAPI app."""
    return TestClient(app)


@pytest.fixture
def rng():
    """A seeded random generator."""
    return np.random.default_rng(1234)


@pytest.fixture
def small_sim_config():
    """A short eight-beam recording with one static two-tone target on beam 3."""
    return SimConfig(
        n_beams=8,
        sample_rate_hz=1024.0,
        duration_s=1.0,
        targets=[
            TargetSpec(
                tonal_freqs_hz=[100.0, 230.0],
                amplitudes=[1.5, 1.5],
                start_beam=3.0,
                end_beam=3.0,
            )
        ],
        noise_sigma=1.0,
        seed=7,
    )


@pytest.fixture
def small_pipeline_toml(tmp_path):
    """Write a pipeline configuration small enough to run every stage quickly."""
    out_dir = tmp_path / "artifacts"
    path = tmp_path / "sonarscale.toml"
    path.write_text(
        f"""
seed = 5

[simulate]
n_beams = 8
sample_rate_hz = 1024.0
duration_s = 1.0
noise_sigma = 1.0

[[simulate.targets]]
tonal_freqs_hz = [100.0, 230.0]
amplitudes = [1.5, 1.5]
start_beam = 3.0
end_beam = 3.0

[filter]
window_length = 16
n_components = 8
train_seconds = 0.5
train_hop = 2
max_iter = 200

[train]
measure = "euclidean"
latent_dim = 2
n_centers = 12
max_iters = 40
segment_seconds = 0.05

[project]
segment_seconds = 0.1

[cluster]
segment_length = 128

[paths]
out_dir = "{out_dir.as_posix()}"
"""
    )
    return path
