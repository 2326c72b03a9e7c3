import copy
import json
import logging
import os
import os.path
from typing import Any, Dict, Literal, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError
from .models import (
    BasisKind,
    Deviation,
    Direction,
    DissimilarityMeasure,
    EmbeddingConfig,
    SimConfig,
    StressConfig,
)

logger = logging.getLogger(__name__)

# Load environment variables
load_dotenv()

LOG_LEVEL = os.getenv("SONARSCALE_LOG_LEVEL", "INFO")

# Model served by the projection API
MODEL_PATH = os.getenv("SONARSCALE_MODEL_PATH", "artifacts/model.json")

# Get server configuration
BACKEND_HOST = os.getenv("BACKEND_HOST", "127.0.0.1")
BACKEND_PORT = int(os.getenv("BACKEND_PORT", "8000"))

# Pipeline configuration path - check multiple locations
CONFIG_LOCATIONS = [
    os.getenv("SONARSCALE_CONFIG", ""),  # From environment variable
    "sonarscale.toml",                   # Current directory
    os.path.join(os.path.dirname(__file__), "../..", "sonarscale.toml"),  # Project root
]


def configure_logging(level: Optional[str] = None) -> None:
    logging.basicConfig(
        level=(level or LOG_LEVEL).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


# ---------------------------------------------------------------------------
# Stage configuration
# ---------------------------------------------------------------------------


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


MeasureName = Literal["euclidean", "sqeuclidean", "kl", "gaussian-kl"]


class FilterStage(_Section):
    enabled: bool = True
    window_length: int = Field(default=64, gt=0)
    hop: int = Field(default=1, ge=1)
    n_components: int = Field(default=16, gt=0)
    flatness_threshold: float = Field(default=0.5, gt=0, lt=1)
    max_iter: int = Field(default=500, gt=0)
    tol: float = Field(default=1e-6, gt=0)
    # Gaussian noise sources rarely converge under ICA; keep the last iterate.
    ica_tolerate_nonconvergence: bool = True
    train_seconds: float = Field(default=1.0, gt=0)
    train_hop: int = Field(default=4, ge=1)
    lofargram_beam: Optional[int] = Field(default=None, ge=0)

    def embedding(self, seed: int) -> EmbeddingConfig:
        return EmbeddingConfig(
            window_length=self.window_length,
            hop=self.hop,
            n_components=self.n_components,
            flatness_threshold=self.flatness_threshold,
            seed=seed,
            max_iter=self.max_iter,
            tol=self.tol,
            ica_tolerate_nonconvergence=self.ica_tolerate_nonconvergence,
        )


class TrainStage(_Section):
    measure: MeasureName = "euclidean"
    direction: Direction = Direction.P_TO_Q
    latent_measure: Literal["auto", "euclidean", "gaussian-kl"] = "auto"
    deviation: Deviation = Deviation.SQUARED_ERROR
    latent_dim: Literal[1, 2, 3] = 3
    n_centers: Optional[int] = Field(default=None, gt=0)
    basis: BasisKind = BasisKind.GAUSSIAN
    init: Literal["pca", "random"] = "pca"
    # Per-sample variance across beams; implied by the gaussian-kl measure.
    gaussian_uncertainty: bool = False
    max_iters: int = Field(default=200, gt=0)
    step_size: float = Field(default=1.0, gt=0)
    tolerance: float = Field(default=1e-6, gt=0)
    segment_start_s: float = Field(default=0.0, ge=0)
    segment_seconds: float = Field(default=0.25, gt=0)
    full_pairs_limit: int = Field(default=1024, gt=2)
    sampled_pairs: int = Field(default=1024 * 1023 // 2, gt=0)

    @property
    def uses_gaussian_points(self) -> bool:
        return self.gaussian_uncertainty or self.measure == "gaussian-kl"

    def input_measure(self) -> DissimilarityMeasure:
        return DissimilarityMeasure.from_name(self.measure, self.direction)

    def stress_config(self, seed: int) -> StressConfig:
        latent = self.latent_measure
        if latent == "auto":
            latent = "gaussian-kl" if self.measure == "gaussian-kl" else "euclidean"
        return StressConfig(
            input_measure=self.input_measure(),
            latent_measure=DissimilarityMeasure.from_name(latent, self.direction),
            deviation=self.deviation,
            max_iters=self.max_iters,
            step_size=self.step_size,
            tolerance=self.tolerance,
            seed=seed,
            full_pairs_limit=self.full_pairs_limit,
            sampled_pairs=self.sampled_pairs,
        )


class ProjectStage(_Section):
    segment_start_s: float = Field(default=0.0, ge=0)
    segment_seconds: float = Field(default=1.0, gt=0)
    spread_percentile: float = Field(default=99.0, gt=0, le=100)
    # Also train euclidean and gaussian-kl models and report both spreads.
    compare_spread: bool = False


class ClusterStage(_Section):
    segment_length: int = Field(default=1024, ge=2)
    overlap_fraction: float = Field(default=0.5, ge=0, lt=1)
    measure: Literal["euclidean", "sqeuclidean", "kl"] = "kl"
    direction: Direction = Direction.SYMMETRIC
    k: Optional[int] = Field(default=None, ge=2)
    z_threshold: float = Field(default=6.0, gt=0)
    # Spectra come from the raw beams or from the analysis (filtered) signal.
    source: Literal["raw", "filtered"] = "raw"

    def spectrum_measure(self) -> DissimilarityMeasure:
        return DissimilarityMeasure.from_name(self.measure, self.direction)


class PathsSection(_Section):
    out_dir: str = "artifacts"
    # External signal container consumed in place of the simulate output.
    signal: Optional[str] = None


class PipelineConfig(_Section):
    seed: int = Field(default=0, ge=0)
    simulate: SimConfig = Field(default_factory=SimConfig)
    filter: FilterStage = Field(default_factory=FilterStage)
    train: TrainStage = Field(default_factory=TrainStage)
    project: ProjectStage = Field(default_factory=ProjectStage)
    cluster: ClusterStage = Field(default_factory=ClusterStage)
    paths: PathsSection = Field(default_factory=PathsSection)

    def sim_config(self) -> SimConfig:
        return self.simulate.model_copy(update={"seed": self.seed})


DEFAULT_CONFIG: Dict[str, Any] = PipelineConfig().model_dump(mode="json")


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def _read_document(path: str) -> Dict[str, Any]:
    try:
        if path.endswith(".json"):
            with open(path, "r") as f:
                return json.load(f)
        with open(path, "rb") as f:
            return tomllib.load(f)
    except (OSError, ValueError) as e:
        raise ConfigError(f"cannot read configuration {path}: {e}") from e


def merge_overrides(data: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    """Deep-merge nested ``overrides`` into a copy of ``data``."""
    merged = copy.deepcopy(data)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge_overrides(merged[key], value)
        else:
            merged[key] = value
    return merged


def find_config_path() -> Optional[str]:
    for config_path in CONFIG_LOCATIONS:
        if config_path and os.path.exists(config_path):
            return config_path
    return None


def load_pipeline_config(
    path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None
) -> PipelineConfig:
    """
    Load and validate the pipeline configuration.

    Args:
        path: TOML or JSON file; when omitted the ``CONFIG_LOCATIONS`` are
            searched and the defaults are used if none exists
        overrides: Nested values applied on top of the file

    Returns:
        PipelineConfig: The validated configuration

    Raises:
        ConfigError: On unreadable files, unknown keys or invalid values
    """
    if path is not None and not os.path.exists(path):
        raise ConfigError(f"configuration file {path} does not exist")
    path = path or find_config_path()
    if path:
        data = _read_document(path)
        logger.info("Loaded config from %s", path)
    else:
        data = {}
        logger.info("Using default configuration as no config file was found")
    if overrides:
        data = merge_overrides(data, overrides)
    try:
        return PipelineConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(str(e)) from e
