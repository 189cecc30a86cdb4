from sqlalchemy import JSON, Column, DateTime, String, Text
from sqlalchemy.sql import func

from prandtl_lab.database import Base


class RunRow(Base):
    __tablename__ = "runs"

    config_hash = Column(String(64), primary_key=True)
    kind = Column(String(20), nullable=False, index=True)
    status = Column(String(20), nullable=False, default="completed")
    started_at = Column(DateTime(timezone=True), nullable=False)
    finished_at = Column(DateTime(timezone=True))
    verdicts = Column(JSON, nullable=False, default=list)
    output_paths = Column(JSON, nullable=False, default=list)
    software_version = Column(String(40), nullable=False)
    error = Column(Text)
    recorded_at = Column(DateTime(timezone=True), server_default=func.now())
