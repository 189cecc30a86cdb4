# prandtl_lab/services/tasks.py
import logging
from typing import Any, Optional

from celery import Celery

from prandtl_lab.core.config import settings
from prandtl_lab.schemas import ScenarioConfig

# Logging
logger = logging.getLogger(__name__)
logging.basicConfig(level=settings.LOG_LEVEL)

# Create Celery instance
celery_app = Celery(
    "prandtl_lab",
    broker=settings.CELERY_BROKER_URL,
    backend=settings.CELERY_RESULT_BACKEND,
)

celery_app.conf.update(
    task_serializer="json",
    result_serializer="json",
    accept_content=["json"],
    timezone="UTC",
    task_always_eager=settings.CELERY_ALWAYS_EAGER,
    task_eager_propagates=True,
)


@celery_app.task(bind=True)
def run_scenario_task(self, config: dict, output_root: Optional[str] = None) -> dict:
    """One scenario run; returns the RunRecord as JSON-ready data."""
    from prandtl_lab.services.runner import run_scenario

    logger.info("run_scenario_task: kind=%s", config.get("kind"))
    record = run_scenario(ScenarioConfig.model_validate(config), output_root=output_root)
    return record.model_dump(mode="json")


@celery_app.task(bind=True)
def scan_row_task(self, config: dict, parameter: str, value: Any, output_root: Optional[str] = None) -> dict:
    """
    One blow-up scan row. Failures never escape: the row carries the error
    text so the scan can continue.
    """
    from prandtl_lab.services.runner import run_scenario

    row = {"parameter": parameter, "value": value, "status": None, "t_star": None, "confirmed": None, "config_hash": None, "error": None}
    try:
        record = run_scenario(ScenarioConfig.model_validate(config), output_root=output_root)
        row["config_hash"] = record.config_hash
        row["error"] = record.error
        if record.verdicts:
            verdict = record.verdicts[-1]
            row["status"] = verdict.status.value
            row["t_star"] = verdict.t_star
            row["confirmed"] = verdict.confirmed
        else:
            row["status"] = record.status
    except Exception as e:
        logger.exception("scan_row_task failed for %s=%r", parameter, value)
        row["status"] = "failed"
        row["error"] = str(e)
    return row
