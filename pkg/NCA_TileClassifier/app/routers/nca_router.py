# app/routers/nca_router.py
from pathlib import Path

from fastapi import APIRouter, HTTPException

from app.controllers import nca_controller
from app.core.config import settings
from app.core.errors import FormatError, ShapeRefError, ValidityError
from app.core.utils import get_utc_timestamp
from app.models.schemas import SimulateRequest
from app.services import async_sim, shape_catalog

router = APIRouter(prefix="/nca", tags=["NCA"])

@router.get("/health")
def health():
    return {"status": "ok", "timestamp": get_utc_timestamp()}

@router.get("/shapes/{prefix}")
def shapes(prefix: str):
    table = shape_catalog.CATALOG_PREFIXES.get(prefix)
    if table is None:
        raise HTTPException(status_code=404, detail=f"unknown catalog {prefix!r}")
    return {
        str(label): shape_catalog.render_shape(shape_catalog.catalog_shape(prefix, label))
        for label in sorted(table)
    }

@router.post("/simulate")
def simulate(request: SimulateRequest):
    if not Path(settings.WEIGHTS_PATH).is_file():
        raise HTTPException(status_code=503, detail=f"weight file {settings.WEIGHTS_PATH} not found")
    try:
        shape = nca_controller.resolve_shape_ref(request.shape_ref, allow_files=False)
        params, q = nca_controller.load_model(settings.WEIGHTS_PATH)
    except (ShapeRefError, FormatError, ValidityError) as exc:
        raise HTTPException(status_code=400, detail=str(exc))
    report = nca_controller.run_mode(shape, params, q, request.mode, request.seed, request.max_updates)
    return {"report": report.model_dump(), "panels": async_sim.render_trace(report)}
