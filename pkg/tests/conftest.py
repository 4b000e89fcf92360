import json
from pathlib import Path

import pytest

from src import response_models as rm
from src.config_manager import ConfigManager

PRESETS = Path(__file__).resolve().parent.parent / "presets"

QP = rm.ModelKind.QUADRATIC_PLATEAU
QP_TRUTH = (80.0, 1.2, -0.003, 180.0)
GRID = rm.ArmGrid((0, 50, 100, 150, 200, 250))


@pytest.fixture(autouse=True)
def app_config(tmp_path, monkeypatch):
    """Console-only logging and a private output directory for every test."""
    path = tmp_path / "config.json"
    path.write_text(json.dumps({
        "logging": {"log_file": "", "console_level": "WARNING"},
        "run": {"output_dir": str(tmp_path / "results"), "workers": 1},
    }), encoding="utf-8")
    monkeypatch.setenv("FERTBANDIT_CONFIG", str(path))
    ConfigManager.reset()
    yield ConfigManager()
    ConfigManager.reset()


@pytest.fixture
def grid():
    return GRID


def econ(p_x, p_y=5.0):
    return rm.EconomicParams(p_y, p_x)
