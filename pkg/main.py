"""
FastAPI app with:
- Router include
- CORS for the configured origins
- Startup prewarm of the scenario fixtures
- Response timing header and a redis-backed health check
"""

from __future__ import annotations
import asyncio
import logging
import os
import time

from fastapi import FastAPI

try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    pass

from api.cors import add_cors
from api.endpoints import router
from utils import kv
from utils.errors import DriverModelError
from utils.fixtures import load_baseline_params, load_params
from utils.kinematics import ScenarioKind

logging.basicConfig(
    level=os.getenv("LOG_LEVEL", "DEBUG").upper(),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

PREWARM_FIXTURES = os.getenv("PREWARM_FIXTURES", "1") == "1"

app = FastAPI(title="Driver DDM API")
add_cors(app)
app.include_router(router)


def _prewarm_fixtures():
    for kind in ScenarioKind:
        try:
            load_params(kind)
        except DriverModelError as e:
            logger.warning("fixture %s not loaded: %s", kind.value, e)
    try:
        load_baseline_params()
    except DriverModelError as e:
        logger.warning("baseline fixture not loaded: %s", e)


@app.on_event("startup")
async def startup():
    if PREWARM_FIXTURES:
        await asyncio.to_thread(_prewarm_fixtures)


# Middleware to capture and expose response timing.
@app.middleware("http")
async def timing_middleware(request, call_next):
    start_time = time.time()
    response = await call_next(request)
    duration_ms = int((time.time() - start_time) * 1000)
    response.headers["X-Response-Time-ms"] = str(duration_ms)
    return response


# Lightweight health endpoint for uptime monitoring.
@app.get("/health")
def health():
    return {"ok": kv.ping()}
