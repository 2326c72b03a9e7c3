from enum import Enum
from typing import Annotated, Any, Dict, List, Optional

import numpy as np
from pydantic import (
    BaseModel,
    BeforeValidator,
    ConfigDict,
    Field,
    PlainSerializer,
    field_validator,
    model_validator,
)


def _as_float_array(value: Any) -> np.ndarray:
    array = np.array(value, dtype=float)
    array.setflags(write=False)
    return array


# Read-only float ndarray that serialises to nested lists (full precision in JSON).
FloatArray = Annotated[
    np.ndarray,
    BeforeValidator(_as_float_array),
    PlainSerializer(lambda a: a.tolist(), return_type=list),
]


class ArrayModel(BaseModel):
    """Base for immutable models that carry numpy arrays."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


# ---------------------------------------------------------------------------
# Dissimilarities
# ---------------------------------------------------------------------------


class ConvexGenerator(str, Enum):
    """Convex functions F that define a Bregman divergence."""

    SQUARED_NORM = "squared_norm"
    SHANNON_ENTROPY_BITS = "shannon_entropy_bits"
    XLOGX = "xlogx"


class MeasureKind(str, Enum):
    EUCLIDEAN = "euclidean"
    SQUARED_EUCLIDEAN = "sqeuclidean"
    BREGMAN = "bregman"
    GAUSSIAN_KL = "gaussian_kl"


class Direction(str, Enum):
    """Argument order for asymmetric measures, relative to (row, column)."""

    P_TO_Q = "p_to_q"
    Q_TO_P = "q_to_p"
    SYMMETRIC = "symmetric"


class GaussianPoint(ArrayModel):
    """An observation with spherical Gaussian uncertainty."""

    mean: FloatArray
    variance: float = Field(gt=0)

    @field_validator("mean")
    @classmethod
    def _check_mean(cls, value: np.ndarray) -> np.ndarray:
        if value.ndim != 1 or value.size == 0:
            raise ValueError("mean must be a non-empty vector")
        if not np.all(np.isfinite(value)):
            raise ValueError("mean must be finite")
        return value

    @property
    def dimension(self) -> int:
        return int(self.mean.size)


class DissimilarityMeasure(BaseModel):
    """A named pairwise dissimilarity between points or Gaussian points."""

    model_config = ConfigDict(frozen=True)

    kind: MeasureKind = MeasureKind.EUCLIDEAN
    generator: Optional[ConvexGenerator] = None
    direction: Direction = Direction.P_TO_Q

    @model_validator(mode="after")
    def _check_generator(self) -> "DissimilarityMeasure":
        if self.kind == MeasureKind.BREGMAN and self.generator is None:
            raise ValueError("a Bregman measure needs a convex generator")
        if self.kind != MeasureKind.BREGMAN and self.generator is not None:
            raise ValueError(f"measure '{self.kind.value}' does not take a generator")
        return self

    @property
    def is_symmetric(self) -> bool:
        return self.kind in (MeasureKind.EUCLIDEAN, MeasureKind.SQUARED_EUCLIDEAN) or (
            self.direction == Direction.SYMMETRIC
        )

    @classmethod
    def from_name(cls, name: str, direction: Direction = Direction.P_TO_Q) -> "DissimilarityMeasure":
        """Build a measure from its command-line name."""
        names = {
            "euclidean": dict(kind=MeasureKind.EUCLIDEAN),
            "sqeuclidean": dict(kind=MeasureKind.SQUARED_EUCLIDEAN),
            "kl": dict(kind=MeasureKind.BREGMAN, generator=ConvexGenerator.SHANNON_ENTROPY_BITS),
            "gaussian-kl": dict(kind=MeasureKind.GAUSSIAN_KL),
        }
        if name not in names:
            raise ValueError(f"unknown measure '{name}'; expected one of {sorted(names)}")
        return cls(direction=direction, **names[name])


# ---------------------------------------------------------------------------
# RBF network and training
# ---------------------------------------------------------------------------


class BasisKind(str, Enum):
    GAUSSIAN = "gaussian"
    THIN_PLATE_SPLINE = "thin_plate_spline"


class RbfModel(ArrayModel):
    """Radial basis function network mapping observations to latent points.

    ``widths`` accepts a scalar, which is broadcast to one width per centre.
    """

    centers: FloatArray
    widths: FloatArray
    weights: FloatArray
    basis_kind: BasisKind = BasisKind.GAUSSIAN

    @model_validator(mode="before")
    @classmethod
    def _broadcast_widths(cls, data: Any) -> Any:
        if isinstance(data, dict) and "centers" in data and "widths" in data:
            widths = np.asarray(data["widths"], dtype=float)
            if widths.ndim == 0:
                n_centers = np.atleast_2d(np.asarray(data["centers"], dtype=float)).shape[0]
                data = {**data, "widths": np.full(n_centers, float(widths))}
        return data

    @model_validator(mode="after")
    def _check_shapes(self) -> "RbfModel":
        if self.centers.ndim != 2 or self.centers.shape[0] < 1:
            raise ValueError("centers must be a K x n matrix with K >= 1")
        n_centers = self.centers.shape[0]
        if self.widths.shape != (n_centers,):
            raise ValueError(f"widths must have length {n_centers}")
        if not np.all(np.isfinite(self.widths)) or np.any(self.widths <= 0):
            raise ValueError("widths must be finite and positive")
        if self.weights.ndim != 2 or self.weights.shape[1] != n_centers:
            raise ValueError(f"weights must be an m x {n_centers} matrix")
        if self.weights.shape[0] not in (1, 2, 3):
            raise ValueError("latent dimension must be 1, 2 or 3")
        return self

    @property
    def input_dim(self) -> int:
        return int(self.centers.shape[1])

    @property
    def latent_dim(self) -> int:
        return int(self.weights.shape[0])

    @property
    def n_centers(self) -> int:
        return int(self.centers.shape[0])

    def with_weights(self, weights: np.ndarray) -> "RbfModel":
        return RbfModel(
            centers=self.centers, widths=self.widths, weights=weights, basis_kind=self.basis_kind
        )


class Deviation(str, Enum):
    """How a pair's input dissimilarity and latent discrepancy are compared."""

    SQUARED_ERROR = "squared"
    BREGMAN_XLOGX = "bregman-xlogx"


class StressConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    input_measure: DissimilarityMeasure = Field(default_factory=DissimilarityMeasure)
    latent_measure: DissimilarityMeasure = Field(default_factory=DissimilarityMeasure)
    deviation: Deviation = Deviation.SQUARED_ERROR
    max_iters: int = Field(default=500, gt=0)
    step_size: float = Field(default=1.0, gt=0)
    tolerance: float = Field(default=1e-6, gt=0)
    seed: int = 0
    # Above this many points the STRESS runs over `sampled_pairs` random pairs.
    full_pairs_limit: int = Field(default=1024, gt=2)
    sampled_pairs: int = Field(default=1024 * 1023 // 2, gt=0)

    @field_validator("latent_measure")
    @classmethod
    def _check_latent(cls, value: DissimilarityMeasure) -> DissimilarityMeasure:
        if value.kind not in (MeasureKind.EUCLIDEAN, MeasureKind.GAUSSIAN_KL):
            raise ValueError("latent measure must be euclidean or gaussian_kl")
        return value


class TrainedProjection(ArrayModel):
    model: RbfModel
    latent_points: FloatArray
    latent_variances: Optional[FloatArray] = None
    stress_history: List[float] = Field(default_factory=list)
    n_pairs: int = 0

    @property
    def final_stress(self) -> float:
        return self.stress_history[-1]


class LatentProjection(ArrayModel):
    points: FloatArray
    variances: Optional[FloatArray] = None


# ---------------------------------------------------------------------------
# Subspace filtering
# ---------------------------------------------------------------------------


class EmbeddingConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    window_length: int = Field(default=64, gt=0)
    hop: int = Field(default=1, ge=1)
    n_components: int = Field(default=16, gt=0)
    flatness_threshold: float = Field(default=0.5, gt=0, lt=1)
    seed: int = 0
    max_iter: int = Field(default=500, gt=0)
    tol: float = Field(default=1e-6, gt=0)
    ica_tolerate_nonconvergence: bool = False

    @model_validator(mode="after")
    def _check_components(self) -> "EmbeddingConfig":
        if self.window_length < self.n_components:
            raise ValueError("window_length must be >= n_components")
        return self


class SourceBank(ArrayModel):
    """Frozen ICA sources of a delay embedding, labelled signal or noise."""

    mixing: FloatArray
    unmixing: FloatArray
    signal_mask: List[bool]
    flatness: List[float] = Field(default_factory=list)
    config: EmbeddingConfig
    n_iter: int = 0

    @model_validator(mode="after")
    def _check_bank(self) -> "SourceBank":
        window, n_components = self.config.window_length, self.config.n_components
        if self.mixing.shape != (window, n_components):
            raise ValueError(f"mixing must be {window} x {n_components}")
        if self.unmixing.shape != (n_components, window):
            raise ValueError(f"unmixing must be {n_components} x {window}")
        if len(self.signal_mask) != n_components:
            raise ValueError("signal_mask length must equal n_components")
        if not np.allclose(np.linalg.norm(self.mixing, axis=0), 1.0, atol=1e-9):
            raise ValueError("mixing columns must have unit norm")
        return self

    @property
    def signal_indices(self) -> List[int]:
        return [i for i, is_signal in enumerate(self.signal_mask) if is_signal]


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


class TargetSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    tonal_freqs_hz: List[float]
    amplitudes: List[float]
    start_beam: float
    end_beam: float
    beam_sigma: float = Field(default=0.35, gt=0)

    @model_validator(mode="after")
    def _check_tones(self) -> "TargetSpec":
        if len(self.tonal_freqs_hz) != len(self.amplitudes):
            raise ValueError("tonal_freqs_hz and amplitudes must have equal length")
        if any(f <= 0 for f in self.tonal_freqs_hz):
            raise ValueError("tonal frequencies must be positive")
        return self


# Per-tone amplitude for about -5 dB SNR against unit-variance noise: A^2 / 2 = 10^-0.5.
DESK_TONE_AMPLITUDE = float(np.sqrt(2 * 10 ** -0.5))


def desk_targets() -> List[TargetSpec]:
    """Three static targets centred on beams 1.5, 32.5 and 55."""
    return [
        TargetSpec(
            tonal_freqs_hz=[150.0, 420.0],
            amplitudes=[DESK_TONE_AMPLITUDE] * 2,
            start_beam=1.5,
            end_beam=1.5,
        ),
        TargetSpec(
            tonal_freqs_hz=[260.0, 610.0],
            amplitudes=[DESK_TONE_AMPLITUDE] * 2,
            start_beam=32.5,
            end_beam=32.5,
        ),
        TargetSpec(
            tonal_freqs_hz=[330.0, 870.0],
            amplitudes=[DESK_TONE_AMPLITUDE] * 2,
            start_beam=55.0,
            end_beam=55.0,
        ),
    ]


class SimConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_beams: int = Field(default=64, ge=1)
    sample_rate_hz: float = Field(default=4096.0, gt=0)
    duration_s: float = Field(default=8.0, gt=0)
    targets: List[TargetSpec] = Field(default_factory=desk_targets)
    noise_sigma: float = Field(default=1.0, ge=0)
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _check_targets(self) -> "SimConfig":
        nyquist = self.sample_rate_hz / 2
        for i, target in enumerate(self.targets):
            if any(f >= nyquist for f in target.tonal_freqs_hz):
                raise ValueError(f"target {i}: tonal frequencies must be below {nyquist} Hz")
            for beam in (target.start_beam, target.end_beam):
                if not 0 <= beam <= self.n_beams - 1:
                    raise ValueError(f"target {i}: beam {beam} outside 0..{self.n_beams - 1}")
        return self

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_s * self.sample_rate_hz))


class MultichannelSignal(ArrayModel):
    """Beams x samples pressure matrix with its sample rate and provenance."""

    data: FloatArray
    sample_rate_hz: float = Field(gt=0)
    metadata: Dict[str, Any] = Field(default_factory=dict)

    @field_validator("data")
    @classmethod
    def _check_data(cls, value: np.ndarray) -> np.ndarray:
        if value.ndim != 2:
            raise ValueError("data must be a beams x samples matrix")
        if not np.all(np.isfinite(value)):
            raise ValueError("data must be finite")
        return value

    @property
    def n_beams(self) -> int:
        return int(self.data.shape[0])

    @property
    def n_samples(self) -> int:
        return int(self.data.shape[1])


# ---------------------------------------------------------------------------
# Beam clustering
# ---------------------------------------------------------------------------


class ChannelSpectrum(ArrayModel):
    psd: FloatArray
    freq_resolution_hz: float = Field(gt=0)
    channel_index: int = Field(ge=0)

    @field_validator("psd")
    @classmethod
    def _check_psd(cls, value: np.ndarray) -> np.ndarray:
        if value.ndim != 1 or value.size == 0:
            raise ValueError("psd must be a non-empty vector")
        if np.any(value < 0):
            raise ValueError("psd bins must be non-negative")
        return value

    def normalized(self) -> np.ndarray:
        """Copy of the PSD scaled to sum to one."""
        total = self.psd.sum()
        if total <= 0:
            return np.full(self.psd.size, 1.0 / self.psd.size)
        return self.psd / total


class DissimilarityRepresentation(ArrayModel):
    prototypes: List[int]
    coords: FloatArray

    @model_validator(mode="after")
    def _check_coords(self) -> "DissimilarityRepresentation":
        if self.coords.ndim != 2 or self.coords.shape[1] != len(self.prototypes):
            raise ValueError("coords must be n_channels x n_prototypes")
        if np.any(self.coords < 0):
            raise ValueError("dissimilarities must be non-negative")
        for j, proto in enumerate(self.prototypes):
            if not 0 <= proto < self.coords.shape[0]:
                raise ValueError(f"prototype index {proto} out of range")
            if self.coords[proto, j] != 0:
                raise ValueError(f"prototype {proto} must have zero self-dissimilarity")
        return self

    @property
    def n_channels(self) -> int:
        return int(self.coords.shape[0])


# ---------------------------------------------------------------------------
# Pipeline state
# ---------------------------------------------------------------------------


class PipelineState(BaseModel):
    """State carried between pipeline stages."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    settings: Any = None
    artifacts: Dict[str, str] = Field(default_factory=dict)
    summaries: List[str] = Field(default_factory=list)
    force: bool = False
    next: Optional[str] = None

    def add_summary(self, line: str) -> List[str]:
        """Return the summary list extended with ``line``."""
        return [*self.summaries, line]
