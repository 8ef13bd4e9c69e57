import json
from pathlib import Path

import pytest

from fpga_reconf.backend import CostModelConfig, SimulatedBackend
from fpga_reconf.orchestrator import load_profiles
from fpga_reconf.scenario import load_scenario

REPO_ROOT = Path(__file__).resolve().parent.parent
GOLDEN_SCENARIO = REPO_ROOT / "scenarios" / "golden.json"
GOLDEN_COST_MODEL = REPO_ROOT / "scenarios" / "golden" / "cost_model.json"
GOLDEN_PROFILES = REPO_ROOT / "scenarios" / "golden" / "profiles"


@pytest.fixture(scope="session")
def golden_scenario_path() -> Path:
    return GOLDEN_SCENARIO


@pytest.fixture
def golden_scenario():
    return load_scenario(GOLDEN_SCENARIO)


@pytest.fixture
def golden_backend() -> SimulatedBackend:
    return SimulatedBackend(CostModelConfig.from_file(GOLDEN_COST_MODEL))


@pytest.fixture(scope="session")
def golden_profiles() -> dict:
    return load_profiles(GOLDEN_PROFILES)


@pytest.fixture
def write_scenario_variant(tmp_path):
    """Copy the golden scenario with edits, fixing relative paths."""

    def _write(mutate, name="variant.json"):
        doc = json.loads(GOLDEN_SCENARIO.read_text())
        doc["profiles_dir"] = str(GOLDEN_PROFILES)
        doc["cost_model"] = str(GOLDEN_COST_MODEL)
        mutate(doc)
        path = tmp_path / name
        path.write_text(json.dumps(doc, indent=2))
        return path

    return _write
