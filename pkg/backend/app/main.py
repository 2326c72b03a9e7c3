import logging
import os
from typing import Any, Dict, List, Optional, Tuple

import uvicorn
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel

from . import config
from .divergence import power_distributions
from .errors import ArtifactError, SonarScaleError
from .models import GaussianPoint, RbfModel
from .trainer import project
from .utils import load_model

logger = logging.getLogger(__name__)

# Create FastAPI app
app = FastAPI(title="Sonarscale Projection API")

# Add CORS middleware
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],  # For development only - restrict in production
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Loaded models keyed by path and modification time
models: Dict[Tuple[str, float], Tuple[RbfModel, Dict[str, Any]]] = {}


class ProjectionRequest(BaseModel):
    points: List[List[float]]
    variances: Optional[List[float]] = None


class ProjectionResponse(BaseModel):
    points: List[List[float]]
    variances: Optional[List[float]] = None


def get_model() -> Tuple[RbfModel, Dict[str, Any]]:
    """Load the served model, caching it until the file changes."""
    path = config.MODEL_PATH
    if not os.path.exists(path):
        raise HTTPException(status_code=503, detail=f"No trained model at {path}")
    key = (path, os.path.getmtime(path))
    if key not in models:
        try:
            models[key] = load_model(path)
        except ArtifactError as e:
            raise HTTPException(status_code=503, detail=str(e))
        logger.info("Loaded model from %s", path)
    return models[key]


@app.get("/")
async def health_check() -> Dict[str, str]:
    """Health check endpoint."""
    return {"status": "healthy", "message": "Sonarscale Projection API is running"}


@app.get("/api/model")
async def model_info() -> Dict[str, Any]:
    model, document = get_model()
    return {
        "input_dim": model.input_dim,
        "latent_dim": model.latent_dim,
        "n_centers": model.n_centers,
        "basis_kind": model.basis_kind.value,
        "config_hash": (document.get("provenance") or {}).get("config_hash"),
        "extras": document.get("extras") or {},
    }


@app.post("/api/project")
async def project_points(request: ProjectionRequest) -> ProjectionResponse:
    """
    Project observations through the served model.

    Args:
        request: Observations (one per row) and optional per-observation variances

    Returns:
        Latent coordinates, plus latent variances when input variances were given
    """
    model, document = get_model()
    extras = document.get("extras") or {}
    try:
        means = request.points
        if extras.get("power_distribution"):
            means = power_distributions(means)
        if request.variances is not None:
            if len(request.variances) != len(request.points):
                raise HTTPException(status_code=422, detail="one variance per point is required")
            inputs = [GaussianPoint(mean=m, variance=v) for m, v in zip(means, request.variances)]
        else:
            inputs = means
        projection = project(model, inputs)
    except (SonarScaleError, ValueError) as e:
        raise HTTPException(status_code=422, detail=str(e))

    return ProjectionResponse(
        points=projection.points.tolist(),
        variances=None if projection.variances is None else projection.variances.tolist(),
    )


def serve(host: Optional[str] = None, port: Optional[int] = None) -> None:
    uvicorn.run(app, host=host or config.BACKEND_HOST, port=port or config.BACKEND_PORT)


if __name__ == "__main__":
    config.configure_logging()
    serve()
