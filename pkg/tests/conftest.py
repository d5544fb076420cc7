import math

import numpy as np
import pytest

from radstack.scene import (
    AgentState,
    EgoState,
    Lane,
    Pose2,
    Scenario,
    generate_synthetic_scenario,
)
from radstack.topology import ProposalPath, graph_search


def straight_lane(lane_id="lane_a", y=0.0, x0=0.0, x1=120.0, limit=10.0, **kw):
    xs = np.arange(x0, x1 + 1e-9, 10.0)
    pts = tuple(Pose2(float(x), float(y), 0.0) for x in xs)
    return Lane(id=lane_id, centerline=pts, speed_limit=limit, **kw)


def rect(x0, y0, x1, y1):
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)


def straight_scenario(agents=(), ego_speed=8.0, limit=10.0, length=120.0, goal_x=100.0):
    lane = straight_lane(x1=length, limit=limit)
    return Scenario(
        lanes=(lane,),
        drivable_area=(rect(-5.0, -4.0, length + 5.0, 4.0),),
        crosswalks=(),
        agents=tuple(agents),
        ego=EgoState(pose=Pose2(0.0, 0.0, 0.0), speed=ego_speed),
        route=("lane_a",),
        goal=Pose2(goal_x, 0.0, 0.0),
        duration=30.0,
        seed=0,
    )


def straight_path(scenario=None, horizon_length=120.0) -> ProposalPath:
    scenario = scenario or straight_scenario()
    return graph_search(scenario.ego, scenario, horizon_length=horizon_length)[0]


@pytest.fixture
def plain_scenario():
    return straight_scenario()


@pytest.fixture
def plain_path(plain_scenario):
    return graph_search(plain_scenario.ego, plain_scenario)[0]


@pytest.fixture
def blocked_scenario():
    return generate_synthetic_scenario("blocked_lane", 7)


@pytest.fixture
def deadlock_scenario():
    return generate_synthetic_scenario("deadlock_pair", 7)


def static_car(agent_id, x, y, heading=0.0, half_length=2.3, half_width=1.0):
    return AgentState(
        id=agent_id,
        pose=Pose2(x, y, heading),
        speed=0.0,
        half_length=half_length,
        half_width=half_width,
        kind="static",
    )
