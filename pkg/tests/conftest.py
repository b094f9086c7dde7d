import copy

import pytest
from hypothesis import settings

from pacmpc.scenario import scenario_from_dict

settings.register_profile("suite", deadline=None, derandomize=True)
settings.load_profile("suite")


# Small bicycle setup used across the unit tests: short horizon, few
# samples, one obstacle off to the side of the straight path to the goal.
TINY = {
    "name": "tiny",
    "seed": 0,
    "feedback": False,
    "stochastic_bounds": True,
    "dynamics": {"type": "bicycle"},
    "noise": {"type": "gaussian", "cov_diag": [0.001, 0.001, 0.1, 0.2, 0.001]},
    "start": [0.0, 0.0, 0.0, 1.0, 0.0],
    "goal": [0.8, 0.0, 0.0, 1.0, 0.0],
    "cost": {"qf_diag": [1.0, 1.0, 0.1, 0.1, 0.0], "q_diag": None},
    "obstacles": [{"center": [0.4, 0.3], "radius": 0.2}],
    "lqr": {"q_diag": [10.0, 10.0, 1.0, 1.0, 1.0], "r_diag": [1.0, 1.0],
            "qf_diag": [100.0, 100.0, 10.0, 10.0, 10.0]},
    "prior": {"mean": 0.0, "variance": 1.0},
    "planner": {"timesteps": 6, "dt": 0.1, "samples": 32, "priors": 3,
                "delta": 0.05, "gamma": 10.0, "iterations": 4,
                "opt_max_iterations": 8},
}


def tiny_dict(**overrides):
    """Deep copy of the tiny scenario dict with top-level overrides."""
    data = copy.deepcopy(TINY)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(data.get(key), dict):
            data[key].update(value)
        else:
            data[key] = value
    return data


def tiny_scenario(**overrides):
    return scenario_from_dict(tiny_dict(**overrides))


@pytest.fixture
def scenario():
    return tiny_scenario()


@pytest.fixture(autouse=True)
def _isolated_worker_env(monkeypatch):
    monkeypatch.delenv("PACMPC_WORKERS", raising=False)
