"""
Redis-backed cache for experiment reports, keyed by config hash.

Every call fails soft: when redis is disabled or unreachable the cache
behaves as empty and the caller recomputes.
"""

import json
import logging
import os
from typing import Any, Dict, Optional

import redis

logger = logging.getLogger(__name__)

REDIS_URL = os.getenv("REDIS_URL", "redis://localhost:6379/0")
REPORT_CACHE_TTL_SECONDS = int(os.getenv("REPORT_CACHE_TTL_SECONDS", str(7 * 24 * 3600)))  # 7 days
REPORT_CACHE_PREFIX = os.getenv("REPORT_CACHE_PREFIX", "driverddm:report:")
ENABLE_REPORT_CACHE = os.getenv("ENABLE_REPORT_CACHE", "1") == "1"

r = redis.Redis.from_url(REDIS_URL, decode_responses=True, socket_connect_timeout=1, socket_timeout=2)


def _key(config_hash: str) -> str:
    return f"{REPORT_CACHE_PREFIX}{config_hash}"


def cache_get_report(config_hash: str) -> Optional[Dict[str, Any]]:
    if not ENABLE_REPORT_CACHE:
        return None
    try:
        v = r.get(_key(config_hash))
    except redis.exceptions.RedisError as e:
        logger.warning("report cache unavailable (%s); computing fresh", e)
        return None
    return json.loads(v) if v else None


def cache_set_report(config_hash: str, payload: Dict[str, Any], ttl: int = REPORT_CACHE_TTL_SECONDS) -> bool:
    if not ENABLE_REPORT_CACHE:
        return False
    try:
        r.setex(_key(config_hash), ttl, json.dumps(payload, sort_keys=True))
    except redis.exceptions.RedisError as e:
        logger.warning("could not store report %s: %s", config_hash, e)
        return False
    return True


def ping() -> bool:
    try:
        return bool(r.ping())
    except redis.exceptions.RedisError:
        return False
