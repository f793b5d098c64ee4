import numpy as np
import pytest

from pedflow.raster import EnvironmentRaster
from pedflow.scenario import (
    FlowRoute,
    Node,
    RouteGraph,
    Scenario,
    SignalSchedule,
    SpawnArea,
    load_bundled_scenario,
)


@pytest.fixture(scope="session")
def scramble():
    return load_bundled_scenario()


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


def make_mini_scenario(raster_value: float = 1.0) -> Scenario:
    """Small single-flow scene for unit tests: walk east, wait at node 2,
    cross to node 3."""
    graph = RouteGraph(
        [Node(1, (0.0, 0.0), 1.5), Node(2, (10.0, 0.0), 1.5, signal_controlled=True),
         Node(3, (20.0, 0.0), 1.5)],
        ["E(1:2)", "E(2:2)", "E(2:3)"],
    )
    flow = FlowRoute("f", ["E(1:2)", "E(2:2)", "E(2:3)"], 3,
                     [SpawnArea((-3.0, 0.0), 1.0)],
                     spawn_interval=2.0, spawn_offset=0.0)
    raster = EnvironmentRaster(np.full((25, 45), raster_value),
                               origin=(-8.0, -12.0), meters_per_cell=1.0)
    return Scenario(
        name="mini",
        graph=graph,
        schedule=SignalSchedule(period=60.0, green_start=10.0, green_end=40.0),
        flows=[flow],
        crosswalk=np.array([[8.0, -2.0], [12.0, -2.0], [12.0, 2.0], [8.0, 2.0]]),
        raster=raster,
    )


@pytest.fixture(scope="session")
def mini():
    return make_mini_scenario()
