import logging
import os
import tempfile
from typing import Optional

from fastapi import APIRouter, File, HTTPException, Query, UploadFile, status

from prandtl_lab.core.errors import LabError
from prandtl_lab.numerics.norms import DEFAULT_M_MAX
from prandtl_lab.schemas import StandardResponse, WeightParams
from prandtl_lab.services.runner import snapshot_norms

logger = logging.getLogger(__name__)
router = APIRouter(prefix="/norms", tags=["Norms"])


@router.post("", response_model=StandardResponse)
async def compute_norms(
    file: UploadFile = File(...),
    s: int = Query(0, ge=0),
    gamma: float = Query(1.0, ge=1.0),
    sigma: Optional[float] = None,
    delta: float = 0.1,
    mu_rate: float = 0.25,
    alpha: float = 0.25,
    tau: float = 1.0,
    m_max: int = Query(DEFAULT_M_MAX, ge=1),
):
    """Norm report of an uploaded Field snapshot CSV."""
    try:
        params = WeightParams(s=s, gamma=gamma, sigma=sigma, delta=delta, mu_rate=mu_rate, alpha=alpha, tau=tau)
    except ValueError as e:
        raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=str(e))

    fd, path = tempfile.mkstemp(suffix=".csv")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(await file.read())
        report = snapshot_norms(path, [params], m_max=m_max)
        return StandardResponse(message="Norms computed", data={"report": report.model_dump(mode="json")})
    except LabError as e:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))
    except Exception as e:
        logger.exception("Error in compute_norms: %s", e)
        raise HTTPException(status_code=500, detail="Internal server error")
    finally:
        os.unlink(path)
