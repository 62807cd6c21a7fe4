import copy
from pathlib import Path

import pytest
import yaml

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

TINY_LQR = {
    "schema": 1,
    "name": "tiny",
    "env": {
        "kind": "lqr",
        "H": 3,
        "A": [[0.5]],
        "B": [[0.5]],
        "P": [[1.0]],
        "Q": [[1.0]],
        "state_low": [-1.0],
        "state_high": [1.0],
        "action_low": [-1.0],
        "action_high": [1.0],
        "sigma_R": 0.1,
        "sigma_P": 0.05,
        "initial_state": [0.8],
    },
    "kernels": {
        "reward": {
            "type": "sum",
            "variance_cap": True,
            "left": {"type": "quadratic", "dim": 1},
            "right": {"type": "quadratic", "dim": 1},
        },
        "transition": {
            "type": "product",
            "variance_cap": True,
            "left": {"type": "sum", "left": {"type": "linear", "dim": 1}, "right": {"type": "linear", "dim": 1}},
            "right": {"type": "index_delta", "cardinality": 1},
        },
    },
    "confidence": {"B_R": "auto", "B_P": "auto", "L": "auto", "delta": 0.1},
    "grid": {"state_res": 9, "action_res": 5},
    "agents": ["gp_ucrl", "psrl", "random", "oracle"],
    "episodes": 6,
    "seeds": [0, 1],
    "output": {"dir": "out"},
}


@pytest.fixture
def tiny_config():
    """A fresh copy of a seconds-scale LQR config mapping."""
    return copy.deepcopy(TINY_LQR)


@pytest.fixture
def write_config(tmp_path):
    def _write(mapping, name="exp.kmdp.conf"):
        path = tmp_path / name
        path.write_text(yaml.safe_dump(mapping, sort_keys=False))
        return path

    return _write


# one line per acceptance criterion, filled in by tests/test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
