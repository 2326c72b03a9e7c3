import functools
import logging
import os
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
from langgraph.graph import END, StateGraph

from .beam_cluster import (
    channel_spectra,
    default_k,
    dissimilarity_representation,
    flag_outlier_beams,
    modeseek,
    spectrum_dissimilarities,
)
from .config import PipelineConfig, TrainStage
from .divergence import PROBABILITY_FLOOR, power_distributions
from .errors import ArtifactError, InvalidInputError, StageError
from .models import GaussianPoint, MultichannelSignal, PipelineState
from .plotting import plot_dissimilarity_scatter, plot_latent_scatter, plot_lofargram
from .rbf import init_model
from .sonar_sim import simulate_with_reference, snr_db, target_beams
from .subspace_filter import filter_signal, fit_sources, stack_trajectories
from .trainer import centroid_spread, project, train
from .utils import (
    check_provenance,
    cluster_frame,
    config_hash,
    coordinates_frame,
    load_model,
    make_provenance,
    read_signal,
    save_model,
    save_source_bank,
    stress_history_frame,
    write_csv,
    write_signal,
)

logger = logging.getLogger(__name__)

ARTIFACT_NAMES = {
    "signal": "signal.bin",
    "clean": "clean.bin",
    "filtered": "filtered.bin",
    "source_bank": "source_bank.json",
    "model": "model.json",
    "stress_history": "stress_history.csv",
    "coordinates": "coordinates.csv",
    "cluster": "cluster.csv",
    "lofargram_raw": "lofargram_raw.svg",
    "lofargram_filtered": "lofargram_filtered.svg",
    "latent_plot": "latent.svg",
    "cluster_plot": "cluster.svg",
}


def artifact_path(cfg: PipelineConfig, name: str) -> str:
    return os.path.join(cfg.paths.out_dir, ARTIFACT_NAMES[name])


# ---------------------------------------------------------------------------
# Config hashes: each stage hashes its own section plus its upstream hash.
# ---------------------------------------------------------------------------


def raw_signal_hash(cfg: PipelineConfig) -> str:
    if cfg.paths.signal:
        _, provenance = read_signal(cfg.paths.signal)
        recorded = (provenance or {}).get("config_hash")
        return config_hash({"seed": cfg.seed, "external": recorded})
    return config_hash({"seed": cfg.seed, "simulate": cfg.simulate.model_dump(mode="json")})


def stage_hashes(cfg: PipelineConfig) -> Dict[str, str]:
    """Config hash of every stage's output under ``cfg``."""
    hashes = {"simulate": raw_signal_hash(cfg)}
    hashes["filter"] = config_hash({"upstream": hashes["simulate"], "filter": cfg.filter.model_dump(mode="json")})
    analysis = hashes["filter"] if cfg.filter.enabled else hashes["simulate"]
    hashes["analysis"] = analysis
    hashes["train"] = config_hash({"upstream": analysis, "train": cfg.train.model_dump(mode="json")})
    hashes["project"] = config_hash({"upstream": hashes["train"], "project": cfg.project.model_dump(mode="json")})
    spectra_upstream = hashes["simulate"] if cfg.cluster.source == "raw" else analysis
    hashes["cluster"] = config_hash({"upstream": spectra_upstream, "cluster": cfg.cluster.model_dump(mode="json")})
    return hashes


def _provenance(cfg: PipelineConfig, stage: str, digest: str) -> Dict[str, Any]:
    return make_provenance(stage, cfg.seed, cfg.model_dump(mode="json"), digest)


# ---------------------------------------------------------------------------
# Stage inputs
# ---------------------------------------------------------------------------


def _raw_signal(state: PipelineState, hashes: Dict[str, str]) -> Tuple[MultichannelSignal, str]:
    cfg = state.settings
    if cfg.paths.signal:
        signal, _ = read_signal(cfg.paths.signal)
        return signal, cfg.paths.signal
    path = artifact_path(cfg, "signal")
    signal, provenance = read_signal(path)
    check_provenance(provenance, hashes["simulate"], path, state.force)
    return signal, path


def _analysis_signal(state: PipelineState, hashes: Dict[str, str]) -> Tuple[MultichannelSignal, str]:
    """The filtered signal when filtering is enabled, else the raw one."""
    cfg = state.settings
    if not cfg.filter.enabled:
        return _raw_signal(state, hashes)
    path = artifact_path(cfg, "filtered")
    signal, provenance = read_signal(path)
    check_provenance(provenance, hashes["filter"], path, state.force)
    return signal, path


def _segment(signal: MultichannelSignal, start_s: float, seconds: float) -> np.ndarray:
    start = int(round(start_s * signal.sample_rate_hz))
    count = int(round(seconds * signal.sample_rate_hz))
    segment = signal.data[:, start : start + count]
    if segment.shape[1] < 3:
        raise InvalidInputError(
            f"segment at {start_s} s of {seconds} s holds {segment.shape[1]} samples; need at least 3"
        )
    return segment


def observation_inputs(segment: np.ndarray, power: bool, gaussian: bool):
    """
    Per-sample observations of a beams x samples segment.

    Each time sample is one point across the beams; with ``power`` it is
    replaced by its beam power distribution, with ``gaussian`` it carries
    the variance across beams of the observation itself, so power
    distributions carry variances in probability units.
    """
    means = segment.T
    if power:
        means = power_distributions(means)
    if not gaussian:
        return means, means
    variances = np.maximum(np.var(means, axis=1), PROBABILITY_FLOOR)
    return means, [GaussianPoint(mean=mean, variance=float(v)) for mean, v in zip(means, variances)]


# ---------------------------------------------------------------------------
# Nodes
# ---------------------------------------------------------------------------


def stage(name: str) -> Callable:
    """Wrap a node so any failure surfaces as a ``StageError`` naming the stage."""

    def decorator(fn: Callable[[PipelineState], Dict[str, Any]]):
        @functools.wraps(fn)
        def wrapper(state: PipelineState) -> Dict[str, Any]:
            try:
                return fn(state)
            except StageError:
                raise
            except Exception as e:
                logger.error("stage %s failed: %s", name, e)
                raise StageError(name, e) from e

        return wrapper

    return decorator


@stage("simulate")
def simulate_node(state: PipelineState) -> Dict[str, Any]:
    cfg: PipelineConfig = state.settings
    hashes = stage_hashes(cfg)
    following = "filter" if cfg.filter.enabled else "train"
    if cfg.paths.signal:
        signal, _ = read_signal(cfg.paths.signal)
        summary = (
            f"simulate: skipped, using {signal.n_beams} beams x {signal.n_samples} samples "
            f"from {cfg.paths.signal}"
        )
        return {"summaries": state.add_summary(summary), "next": following}

    sim = cfg.sim_config()
    noisy, clean = simulate_with_reference(sim)
    provenance = _provenance(cfg, "simulate", hashes["simulate"])
    write_signal(artifact_path(cfg, "signal"), noisy, provenance)
    write_signal(artifact_path(cfg, "clean"), clean, provenance)

    beam = _lofargram_beam(cfg, noisy.n_beams)
    plot_lofargram(noisy, beam, artifact_path(cfg, "lofargram_raw"), title=f"Beam {beam} (raw)")

    summary = (
        f"simulate: {noisy.n_beams} beams x {noisy.n_samples} samples at {noisy.sample_rate_hz:g} Hz, "
        f"target beams {target_beams(sim)} -> {artifact_path(cfg, 'signal')}"
    )
    artifacts = {
        **state.artifacts,
        "signal": artifact_path(cfg, "signal"),
        "clean": artifact_path(cfg, "clean"),
        "lofargram_raw": artifact_path(cfg, "lofargram_raw"),
    }
    return {
        "artifacts": artifacts,
        "summaries": state.add_summary(summary),
        "next": following,
    }


def _lofargram_beam(cfg: PipelineConfig, n_beams: int) -> int:
    if cfg.filter.lofargram_beam is not None:
        return min(cfg.filter.lofargram_beam, n_beams - 1)
    if cfg.paths.signal:
        return 0
    beams = target_beams(cfg.sim_config())
    return beams[0] if beams else 0


@stage("filter")
def filter_node(state: PipelineState) -> Dict[str, Any]:
    cfg: PipelineConfig = state.settings
    hashes = stage_hashes(cfg)
    signal, _ = _raw_signal(state, hashes)

    embedding = cfg.filter.embedding(cfg.seed)
    n_train = min(signal.n_samples, int(round(cfg.filter.train_seconds * signal.sample_rate_hz)))
    trajectories = stack_trajectories(signal.data[:, :n_train], embedding.window_length, cfg.filter.train_hop)
    bank = fit_sources(trajectories, embedding)
    filtered = filter_signal(signal, bank, embedding)

    provenance = _provenance(cfg, "filter", hashes["filter"])
    save_source_bank(artifact_path(cfg, "source_bank"), bank, provenance)
    write_signal(artifact_path(cfg, "filtered"), filtered, provenance)
    beam = _lofargram_beam(cfg, signal.n_beams)
    plot_lofargram(filtered, beam, artifact_path(cfg, "lofargram_filtered"), title=f"Beam {beam} (filtered)")

    summary = (
        f"filter: {len(bank.signal_indices)} of {embedding.n_components} sources kept, "
        f"fitted on {trajectories.shape[0]} windows"
    )
    gain = _median_snr_gain(cfg, signal, filtered)
    if gain is not None:
        summary += f", median SNR gain on target beams {gain:.2f} dB"
    summary += f" -> {artifact_path(cfg, 'filtered')}"
    artifacts = {
        **state.artifacts,
        "source_bank": artifact_path(cfg, "source_bank"),
        "filtered": artifact_path(cfg, "filtered"),
        "lofargram_filtered": artifact_path(cfg, "lofargram_filtered"),
    }
    return {"artifacts": artifacts, "summaries": state.add_summary(summary)}


def _median_snr_gain(
    cfg: PipelineConfig, raw: MultichannelSignal, filtered: MultichannelSignal
) -> Optional[float]:
    clean_path = artifact_path(cfg, "clean")
    if cfg.paths.signal or not os.path.exists(clean_path):
        return None
    clean, _ = read_signal(clean_path)
    if clean.data.shape != raw.data.shape:
        return None
    beams = target_beams(cfg.sim_config())
    if not beams:
        return None
    gain = snr_db(filtered, clean) - snr_db(raw, clean)
    return float(np.median(gain[beams]))


def _fit(signal: MultichannelSignal, train_cfg: TrainStage, seed: int):
    segment = _segment(signal, train_cfg.segment_start_s, train_cfg.segment_seconds)
    means, inputs = observation_inputs(segment, train_cfg.measure == "kl", train_cfg.uses_gaussian_points)
    model = init_model(
        means,
        latent_dim=train_cfg.latent_dim,
        n_centers=train_cfg.n_centers,
        basis_kind=train_cfg.basis,
        seed=seed,
        init=train_cfg.init,
    )
    return means, train(inputs, train_cfg.stress_config(seed), model)


def compare_spreads(cfg: PipelineConfig, signal: MultichannelSignal) -> Dict[str, float]:
    """
    Centroid spread of the project segment under euclidean and gaussian-kl training.

    Both models are trained on the train segment with the rest of the
    ``train`` section unchanged; the returned spreads use the configured
    ``spread_percentile``.
    """
    segment = _segment(signal, cfg.project.segment_start_s, cfg.project.segment_seconds)
    spreads = {}
    for measure in ("euclidean", "gaussian-kl"):
        train_cfg = cfg.train.model_copy(update={"measure": measure, "latent_measure": "auto"})
        _, result = _fit(signal, train_cfg, cfg.seed)
        _, inputs = observation_inputs(segment, False, train_cfg.uses_gaussian_points)
        projection = project(result.model, inputs)
        spreads[measure] = centroid_spread(projection.points, cfg.project.spread_percentile)
        logger.info("%s training: centroid spread %.6g", measure, spreads[measure])
    return spreads


@stage("train")
def train_node(state: PipelineState) -> Dict[str, Any]:
    cfg: PipelineConfig = state.settings
    train_cfg = cfg.train
    hashes = stage_hashes(cfg)
    signal, _ = _analysis_signal(state, hashes)

    power = train_cfg.measure == "kl"
    means, result = _fit(signal, train_cfg, cfg.seed)

    provenance = _provenance(cfg, "train", hashes["train"])
    extras = {"power_distribution": power, "gaussian_points": train_cfg.uses_gaussian_points}
    save_model(artifact_path(cfg, "model"), result.model, provenance, extras)
    write_csv(artifact_path(cfg, "stress_history"), stress_history_frame(result.stress_history), provenance)

    summary = (
        f"train: {means.shape[0]} points, {result.n_pairs} pairs, "
        f"{len(result.stress_history) - 1} iterations, final stress {result.final_stress:.6g} "
        f"(initial {result.stress_history[0]:.6g}) -> {artifact_path(cfg, 'model')}"
    )
    artifacts = {
        **state.artifacts,
        "model": artifact_path(cfg, "model"),
        "stress_history": artifact_path(cfg, "stress_history"),
    }
    return {"artifacts": artifacts, "summaries": state.add_summary(summary)}


@stage("project")
def project_node(state: PipelineState) -> Dict[str, Any]:
    cfg: PipelineConfig = state.settings
    hashes = stage_hashes(cfg)
    model_path = artifact_path(cfg, "model")
    model, document = load_model(model_path)
    check_provenance(document.get("provenance"), hashes["train"], model_path, state.force)
    extras = document.get("extras") or {}

    signal, _ = _analysis_signal(state, hashes)
    if signal.n_beams != model.input_dim:
        raise ArtifactError(
            f"signal has {signal.n_beams} beams but the model expects {model.input_dim} inputs"
        )
    start_s = cfg.project.segment_start_s
    segment = _segment(signal, start_s, cfg.project.segment_seconds)
    _, inputs = observation_inputs(
        segment, bool(extras.get("power_distribution")), bool(extras.get("gaussian_points"))
    )
    projection = project(model, inputs)
    spread = centroid_spread(projection.points, cfg.project.spread_percentile)

    provenance = _provenance(cfg, "project", hashes["project"])
    offset = int(round(start_s * signal.sample_rate_hz))
    write_csv(
        artifact_path(cfg, "coordinates"),
        coordinates_frame(projection.points, projection.variances, offset),
        provenance,
    )
    times = (offset + np.arange(projection.points.shape[0])) / signal.sample_rate_hz
    plot_latent_scatter(projection.points, artifact_path(cfg, "latent_plot"), colour=times)

    summary = (
        f"project: {projection.points.shape[0]} points to {model.latent_dim}-D, "
        f"{cfg.project.spread_percentile:g}th-percentile centroid distance {spread:.6g}"
    )
    if cfg.project.compare_spread:
        spreads = compare_spreads(cfg, signal)
        summary += f" (euclidean {spreads['euclidean']:.6g}, gaussian-kl {spreads['gaussian-kl']:.6g})"
    summary += f" -> {artifact_path(cfg, 'coordinates')}"
    artifacts = {
        **state.artifacts,
        "coordinates": artifact_path(cfg, "coordinates"),
        "latent_plot": artifact_path(cfg, "latent_plot"),
    }
    return {"artifacts": artifacts, "summaries": state.add_summary(summary)}


@stage("cluster")
def cluster_node(state: PipelineState) -> Dict[str, Any]:
    cfg: PipelineConfig = state.settings
    cluster_cfg = cfg.cluster
    hashes = stage_hashes(cfg)
    source = _raw_signal if cluster_cfg.source == "raw" else _analysis_signal
    signal, _ = source(state, hashes)

    measure = cluster_cfg.spectrum_measure()
    spectra = channel_spectra(signal, cluster_cfg.segment_length, cluster_cfg.overlap_fraction)
    dissimilarities = spectrum_dissimilarities(spectra, measure)
    k = cluster_cfg.k if cluster_cfg.k is not None else default_k(len(spectra))
    prototypes = modeseek(dissimilarities, k)
    rep = dissimilarity_representation(spectra, prototypes, measure)
    flagged = flag_outlier_beams(rep, cluster_cfg.z_threshold)

    provenance = _provenance(cfg, "cluster", hashes["cluster"])
    write_csv(artifact_path(cfg, "cluster"), cluster_frame(rep.coords, flagged), provenance)
    plot_dissimilarity_scatter(rep, flagged, artifact_path(cfg, "cluster_plot"))

    summary = f"cluster: prototypes {prototypes}, flagged beams {flagged} -> {artifact_path(cfg, 'cluster')}"
    artifacts = {
        **state.artifacts,
        "cluster": artifact_path(cfg, "cluster"),
        "cluster_plot": artifact_path(cfg, "cluster_plot"),
    }
    return {"artifacts": artifacts, "summaries": state.add_summary(summary)}


STAGE_NODES: Dict[str, Callable[[PipelineState], Dict[str, Any]]] = {
    "simulate": simulate_node,
    "filter": filter_node,
    "train": train_node,
    "project": project_node,
    "cluster": cluster_node,
}


def create_graph():
    """
    Create the stage graph: simulate, optional filter, train, project, cluster.

    Returns:
        The compiled graph
    """
    graph = StateGraph(PipelineState)

    for name, node in STAGE_NODES.items():
        graph.add_node(name, node)

    graph.set_entry_point("simulate")
    graph.add_conditional_edges(
        "simulate",
        lambda state: state.next,
        {
            "filter": "filter",
            "train": "train",
        },
    )
    graph.add_edge("filter", "train")
    graph.add_edge("train", "project")
    graph.add_edge("project", "cluster")
    graph.add_edge("cluster", END)

    return graph.compile()


# Initialize the graph
pipeline_graph = create_graph()


def run_pipeline(config: PipelineConfig, force: bool = False) -> PipelineState:
    """Run every stage in order; raises ``StageError`` naming the first failing stage."""
    result = pipeline_graph.invoke(PipelineState(settings=config, force=force))
    return PipelineState(**result)


def run_stage(name: str, config: PipelineConfig, force: bool = False) -> PipelineState:
    """Run a single stage against artifacts already in the output directory."""
    if name not in STAGE_NODES:
        raise ValueError(f"unknown stage '{name}'")
    state = PipelineState(settings=config, force=force)
    return state.model_copy(update=STAGE_NODES[name](state))


def stage_names() -> List[str]:
    return list(STAGE_NODES)