import hashlib
import io
import json
import logging
import os
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from .errors import ArtifactError
from .models import MultichannelSignal, RbfModel, SourceBank

logger = logging.getLogger(__name__)

SIGNAL_FORMAT = "sonarscale-signal/1"
ARTIFACT_FORMAT = "sonarscale-artifact/1"


def canonical_json(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def config_hash(payload: Dict[str, Any]) -> str:
    """SHA-256 of the canonical JSON of ``payload``."""
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


def make_provenance(stage: str, seed: int, config: Dict[str, Any], digest: str) -> Dict[str, Any]:
    return {"stage": stage, "seed": seed, "config_hash": digest, "config": config}


def check_provenance(
    provenance: Optional[Dict[str, Any]], expected_hash: str, path: str, force: bool = False
) -> None:
    """
    Refuse an artifact produced under a different upstream configuration.

    Raises:
        ArtifactError: If the recorded hash differs and ``force`` is not set
    """
    recorded = (provenance or {}).get("config_hash")
    if recorded == expected_hash:
        return
    if force:
        logger.warning("%s was produced by a different configuration; continuing (--force)", path)
        return
    raise ArtifactError(
        f"{path} was produced by config {recorded}, current config is {expected_hash}; "
        "re-run the upstream stage or pass --force"
    )


# ---------------------------------------------------------------------------
# Signal container: one JSON header line, then raw little-endian float32
# samples, beam-major.
# ---------------------------------------------------------------------------


def write_signal(path: str, signal: MultichannelSignal, provenance: Optional[Dict[str, Any]] = None) -> None:
    header = {
        "format": SIGNAL_FORMAT,
        "shape": [signal.n_beams, signal.n_samples],
        "sample_rate_hz": signal.sample_rate_hz,
        "dtype": "float32",
        "endianness": "little",
        "layout": "beam-major",
        "seed": signal.metadata.get("seed"),
        "metadata": signal.metadata,
        "provenance": provenance,
    }
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(canonical_json(header).encode("utf-8") + b"\n")
        f.write(np.ascontiguousarray(signal.data, dtype="<f4").tobytes())
    logger.debug("wrote signal %s with shape %s", path, header["shape"])


def read_signal(path: str) -> Tuple[MultichannelSignal, Optional[Dict[str, Any]]]:
    """Read a signal container; returns the signal and its provenance."""
    if not os.path.exists(path):
        raise ArtifactError(f"signal file {path} does not exist")
    with open(path, "rb") as f:
        line = f.readline()
        try:
            header = json.loads(line.decode("utf-8"))
        except ValueError as e:
            raise ArtifactError(f"{path} has no readable header: {e}") from e
        if header.get("format") != SIGNAL_FORMAT:
            raise ArtifactError(f"{path} is not a signal container")
        n_beams, n_samples = header["shape"]
        data = np.frombuffer(f.read(), dtype="<f4")
    if data.size != n_beams * n_samples:
        raise ArtifactError(f"{path} holds {data.size} samples, header declares {n_beams * n_samples}")
    signal = MultichannelSignal(
        data=data.reshape(n_beams, n_samples).astype(float),
        sample_rate_hz=header["sample_rate_hz"],
        metadata=header.get("metadata") or {},
    )
    return signal, header.get("provenance")


# ---------------------------------------------------------------------------
# JSON artifacts (models and source banks)
# ---------------------------------------------------------------------------


def write_json_artifact(
    path: str, kind: str, payload: Dict[str, Any], provenance: Dict[str, Any], extras: Optional[Dict[str, Any]] = None
) -> None:
    document = {
        "format": ARTIFACT_FORMAT,
        "kind": kind,
        "provenance": provenance,
        "extras": extras or {},
        "payload": payload,
    }
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as f:
        json.dump(document, f, sort_keys=True, indent=1)


def read_json_artifact(path: str, kind: str) -> Dict[str, Any]:
    if not os.path.exists(path):
        raise ArtifactError(f"{kind} file {path} does not exist")
    try:
        with open(path, "r") as f:
            document = json.load(f)
    except ValueError as e:
        raise ArtifactError(f"{path} is not valid JSON: {e}") from e
    if document.get("format") != ARTIFACT_FORMAT or document.get("kind") != kind:
        raise ArtifactError(f"{path} is not a {kind} artifact")
    return document


def save_model(path: str, model: RbfModel, provenance: Dict[str, Any], extras: Optional[Dict[str, Any]] = None) -> None:
    write_json_artifact(path, "rbf_model", model.model_dump(mode="json"), provenance, extras)


def load_model(path: str) -> Tuple[RbfModel, Dict[str, Any]]:
    """Load a model artifact; returns the model and the whole document."""
    document = read_json_artifact(path, "rbf_model")
    return RbfModel.model_validate(document["payload"]), document


def save_source_bank(path: str, bank: SourceBank, provenance: Dict[str, Any]) -> None:
    write_json_artifact(path, "source_bank", bank.model_dump(mode="json"), provenance)


def load_source_bank(path: str) -> Tuple[SourceBank, Dict[str, Any]]:
    document = read_json_artifact(path, "source_bank")
    return SourceBank.model_validate(document["payload"]), document


# ---------------------------------------------------------------------------
# CSV artifacts
# ---------------------------------------------------------------------------


def write_csv(path: str, frame: pd.DataFrame, provenance: Dict[str, Any]) -> None:
    """Write ``frame`` with full float precision under a ``#`` provenance header."""
    buffer = io.StringIO()
    buffer.write(f"# stage: {provenance['stage']}\n")
    buffer.write(f"# seed: {provenance['seed']}\n")
    buffer.write(f"# config_hash: {provenance['config_hash']}\n")
    buffer.write(f"# config: {canonical_json(provenance['config'])}\n")
    frame.to_csv(buffer, index=False, float_format="%.17g", lineterminator="\n")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as f:
        f.write(buffer.getvalue())


def read_csv(path: str) -> pd.DataFrame:
    if not os.path.exists(path):
        raise ArtifactError(f"CSV file {path} does not exist")
    return pd.read_csv(path, comment="#", float_precision="round_trip")


def read_csv_provenance(path: str) -> Dict[str, str]:
    fields: Dict[str, str] = {}
    with open(path, "r") as f:
        for line in f:
            if not line.startswith("# "):
                break
            key, _, value = line[2:].rstrip("\n").partition(": ")
            fields[key] = value
    return fields


def stress_history_frame(history: List[float]) -> pd.DataFrame:
    return pd.DataFrame({"iteration": np.arange(len(history)), "stress": np.asarray(history, dtype=float)})


def coordinates_frame(points: np.ndarray, variances: Optional[np.ndarray] = None, offset: int = 0) -> pd.DataFrame:
    points = np.asarray(points, dtype=float)
    frame = pd.DataFrame({"sample": np.arange(offset, offset + points.shape[0])})
    for j in range(points.shape[1]):
        frame[f"y{j + 1}"] = points[:, j]
    if variances is not None:
        frame["variance"] = np.asarray(variances, dtype=float)
    return frame


def cluster_frame(coords: np.ndarray, flagged: List[int]) -> pd.DataFrame:
    coords = np.asarray(coords, dtype=float)
    frame = pd.DataFrame({"channel": np.arange(coords.shape[0])})
    for j in range(coords.shape[1]):
        frame[f"d{j + 1}"] = coords[:, j]
    flagged_set = set(flagged)
    frame["flagged"] = [int(i in flagged_set) for i in range(coords.shape[0])]
    return frame
