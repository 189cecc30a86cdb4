import logging

from fastapi import APIRouter, Depends, HTTPException, status
from sqlalchemy.orm import Session

from prandtl_lab.core.errors import ConfigError, LabError
from prandtl_lab.database import get_db
from prandtl_lab.schemas import RunRecord, RunRequest, StandardResponse
from prandtl_lab.services.runner import get_run, parse_config
from prandtl_lab.services.tasks import run_scenario_task

logger = logging.getLogger(__name__)
router = APIRouter(prefix="/runs", tags=["Runs"])


@router.post("", response_model=StandardResponse, status_code=status.HTTP_201_CREATED)
def create_run(request: RunRequest):
    try:
        config = parse_config(request.config_yaml)
        record = RunRecord.model_validate(run_scenario_task.apply_async(args=[config.model_dump(mode="json")]).get())
        return StandardResponse(
            message=f"Run {record.status}",
            data={"run": record.model_dump(mode="json")},
        )
    except ConfigError as e:
        raise HTTPException(
            status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
            detail={"violations": list(e.violations), "line": e.line, "column": e.column},
        )
    except LabError as e:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))
    except HTTPException:
        raise
    except Exception as e:
        logger.exception("Error in create_run: %s", e)
        raise HTTPException(status_code=500, detail="Internal server error")


@router.get("/{config_hash}", response_model=RunRecord)
def read_run(config_hash: str, db: Session = Depends(get_db)):
    try:
        record = get_run(config_hash, db=db)
        if record is None:
            raise HTTPException(status_code=status.HTTP_404_NOT_FOUND, detail="Run not found")
        return record
    except HTTPException:
        raise
    except Exception as e:
        logger.exception("Error in read_run: %s", e)
        raise HTTPException(status_code=500, detail="Internal server error")
