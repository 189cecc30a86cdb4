# prandtl_lab/services/cache.py
import json
import logging
from typing import Any, Optional

import redis

from prandtl_lab.core.config import settings

logger = logging.getLogger(__name__)

# Try to create Redis client; if it fails, keep client None and every lookup is a miss
redis_client: Optional[redis.Redis]
try:
    redis_client = redis.Redis.from_url(settings.REDIS_URL, decode_responses=True, socket_connect_timeout=0.5)
    try:
        redis_client.ping()
    except Exception as e:
        logger.warning("Redis ping failed at startup: %s", e)
        redis_client = None
except Exception as e:
    logger.warning("Failed to initialize Redis client: %s", e)
    redis_client = None


def _get(key: str) -> Optional[Any]:
    if not redis_client:
        return None
    try:
        data = redis_client.get(key)
        return json.loads(data) if data else None
    except Exception as e:
        logger.warning("cache get(%s): redis error: %s", key, e)
        return None


def _set(key: str, value: Any, expire_seconds: Optional[int] = None) -> None:
    if not redis_client:
        return
    try:
        redis_client.setex(key, expire_seconds or settings.CACHE_TTL_SECONDS, json.dumps(value, default=str))
    except Exception as e:
        logger.warning("cache set(%s): redis error: %s", key, e)


# ----------------- RUN RECORDS -----------------
def get_cached_run(config_hash: str) -> Optional[dict]:
    return _get(f"run:{config_hash}")


def set_cached_run(config_hash: str, record: Any, expire_seconds: Optional[int] = None) -> None:
    _set(f"run:{config_hash}", record, expire_seconds)


def invalidate_run_cache(config_hash: str) -> None:
    if not redis_client:
        return
    try:
        redis_client.delete(f"run:{config_hash}")
    except Exception as e:
        logger.warning("invalidate_run_cache(%s): redis error: %s", config_hash, e)


# ----------------- SELF-SIMILAR SOLUTIONS -----------------
def selfsimilar_key(n: float, beta: float, N: float, eta_inf: float) -> str:
    return f"selfsimilar:{n!r}:{beta!r}:{N!r}:{eta_inf!r}"


def get_cached_selfsimilar(key: str) -> Optional[dict]:
    return _get(key)


def set_cached_selfsimilar(key: str, summary: Any, expire_seconds: Optional[int] = None) -> None:
    _set(key, summary, expire_seconds)
