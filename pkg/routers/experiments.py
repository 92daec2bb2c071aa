import tempfile
from typing import List

from fastapi import APIRouter, HTTPException, Query
from fastapi.concurrency import run_in_threadpool
from pydantic import ValidationError

from cli import run
from config import settings
from models.schemas import DirichletParams, DirichletReport, ExperimentConfig, ExperimentName, RunManifest
from services.environment import dirichlet_report
from utils import ConfigError, get_logger

logger = get_logger(__name__)

router = APIRouter(prefix="/api", tags=["experiments"])


@router.get("/health")
async def health_check():
    """Health check endpoint."""
    logger.debug("Health check endpoint accessed")
    return {
        "status": "healthy",
        "service": "rwre-lab",
        "version": settings.api_version
    }


@router.get("/dirichlet", response_model=DirichletReport)
async def dirichlet_diagnostics(
    alphas: List[float] = Query(..., description="2d Dirichlet weights, index i+d pairs with -e_i")
):
    """kappa, the sufficient ballisticity condition and the implied moment order."""
    logger.info(f"Dirichlet diagnostics request: alphas={alphas}")
    try:
        params = DirichletParams(dimension_d=len(alphas) // 2, alphas=tuple(alphas))
    except ValidationError as e:
        logger.error(f"Invalid Dirichlet parameters: {e}", exc_info=True)
        raise HTTPException(status_code=422, detail=e.errors(include_url=False, include_context=False))
    return dirichlet_report(params)


@router.post("/experiments/{experiment}", response_model=RunManifest)
async def run_experiment_endpoint(experiment: ExperimentName, config: ExperimentConfig):
    """
    Run an experiment synchronously and return its manifest.

    Results go to the config's output_dir, or to a fresh temporary directory.
    """
    if config.experiment is not experiment:
        raise HTTPException(
            status_code=422,
            detail=f"body declares experiment '{config.experiment.value}' but path says '{experiment.value}'",
        )
    out = config.output_dir or tempfile.mkdtemp(prefix=f"rwre-{experiment.value}-")
    logger.info(f"Experiment request: {experiment.value}, master_seed={config.master_seed}, out={out}")

    try:
        manifest = await run_in_threadpool(run, config, None, out)
    except (ConfigError, ValidationError) as e:
        logger.error(f"Experiment config rejected: {e}", exc_info=True)
        raise HTTPException(status_code=422, detail=str(e))
    except Exception as e:
        logger.error(f"Experiment failed: {e}", exc_info=True)
        raise HTTPException(status_code=500, detail=f"Experiment failed: {str(e)}")

    logger.info(f"Experiment {experiment.value} finished: {len(manifest.files)} files in {out}")
    return manifest
