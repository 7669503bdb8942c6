import os
import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT))

# no redis in tests; the report cache behaves as empty
os.environ.setdefault("ENABLE_REPORT_CACHE", "0")
os.environ.setdefault("PREWARM_FIXTURES", "0")

from utils.fixtures import load_params  # noqa: E402
from utils.kinematics import ScenarioConfig, ScenarioKind  # noqa: E402


@pytest.fixture
def cutin_params():
    return load_params(ScenarioKind.CUT_IN)


@pytest.fixture
def rearend_params():
    return load_params(ScenarioKind.REAR_END)


@pytest.fixture
def lanechange_params():
    return load_params(ScenarioKind.LANE_CHANGE)


@pytest.fixture
def scenario_config():
    return ScenarioConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(20240101)


@pytest.fixture
def fixtures_dir():
    return str(ROOT / "fixtures")
