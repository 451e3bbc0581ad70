import numpy as np
import pytest

from crowdirl.features import CostParams
from crowdirl.trajectory import AgentState, JointState, ScenarioSpec


@pytest.fixture
def single_agent_spec() -> ScenarioSpec:
    """One agent drifting near the origin with a goal at (0, 0)."""
    return ScenarioSpec(
        k=1,
        x0=JointState((AgentState(2.0, -1.0, 0.3, 0.1),)),
        goals=np.array([[0.0, 0.0]]),
        horizon=10,
        dt=0.1,
    )


@pytest.fixture
def intersection_spec() -> ScenarioSpec:
    """Three pedestrians crossing paths: southbound, westbound, eastbound."""
    return ScenarioSpec(
        k=3,
        x0=JointState(
            (
                AgentState(0.0, 2.2, 0.0, -1.2),
                AgentState(1.8, 0.3, -1.2, 0.0),
                AgentState(-1.8, -0.3, 1.2, 0.0),
            )
        ),
        goals=np.array([[0.0, -1.4], [-1.8, 0.3], [1.8, -0.3]]),
        horizon=30,
        dt=0.1,
    )


@pytest.fixture
def theta_star() -> list[CostParams]:
    return [CostParams(np.array([1.0, 0.5, 0.2]))] * 3
