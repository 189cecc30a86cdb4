from sqlalchemy import create_engine
from sqlalchemy.orm import declarative_base, sessionmaker

from prandtl_lab.core.config import settings

engine = create_engine(
    settings.DATABASE_URL,
    connect_args={"check_same_thread": False} if "sqlite" in settings.DATABASE_URL else {},
)

SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)
Base = declarative_base()


def get_db():
    """Dependency yielding a session for the run bookkeeping table."""
    db = SessionLocal()
    try:
        yield db
    finally:
        db.close()


def init_db() -> None:
    # models must be imported so their tables are registered on Base
    from prandtl_lab import models  # noqa: F401

    Base.metadata.create_all(bind=engine)
