import shutil
from pathlib import Path

from prandtl_lab.core.config import settings
from prandtl_lab.database import SessionLocal, init_db
from prandtl_lab.models import RunRow
from prandtl_lab.services.cache import invalidate_run_cache


def instant_delete_all_runs():
    init_db()
    db = SessionLocal()
    try:
        for row in db.query(RunRow).all():
            shutil.rmtree(Path(settings.OUTPUT_ROOT) / row.config_hash, ignore_errors=True)
            invalidate_run_cache(row.config_hash)
            db.delete(row)
            print(f"Deleted run {row.config_hash} and its outputs")
        db.commit()
    finally:
        db.close()


if __name__ == "__main__":
    instant_delete_all_runs()
