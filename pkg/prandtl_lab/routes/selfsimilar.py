import logging

from fastapi import APIRouter, HTTPException, Query, status

from prandtl_lab.core.errors import LabError
from prandtl_lab.numerics.self_similar import DEFAULT_ETA_INF
from prandtl_lab.schemas import SelfSimilarSummary
from prandtl_lab.services.runner import selfsimilar_summary

logger = logging.getLogger(__name__)
router = APIRouter(prefix="/selfsimilar", tags=["Self-similar"])


def _summary(n: float, beta: float, N: float, eta_inf: float, table: bool) -> SelfSimilarSummary:
    try:
        return selfsimilar_summary(n, beta, N, eta_inf, with_table=table)
    except LabError as e:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))
    except Exception as e:
        logger.exception("Error in selfsimilar: %s", e)
        raise HTTPException(status_code=500, detail="Internal server error")


@router.get("/blasius", response_model=SelfSimilarSummary)
def blasius(eta_inf: float = Query(DEFAULT_ETA_INF, ge=8.0), table: bool = False):
    return _summary(1.0, 0.0, 0.0, eta_inf, table)


@router.get("/powerlaw", response_model=SelfSimilarSummary)
def powerlaw(
    n: float = Query(1.0, gt=0.0),
    beta: float = 0.0,
    N: float = 0.0,
    eta_inf: float = Query(DEFAULT_ETA_INF, ge=8.0),
    table: bool = False,
):
    return _summary(n, beta, N, eta_inf, table)
