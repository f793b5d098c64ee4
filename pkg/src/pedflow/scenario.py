"""Scene description: route graph, signal schedule, pedestrian flows.

The walkable space is abstracted into a small directed graph. Nodes are
decision points (plaza entrances, crossing ends) with a circular
neighborhood; an edge E(a:b) means "walk from node a toward node b". A
loop edge E(a:a) expresses dwelling at a signal-controlled node while
waiting for green. A flow is a spawn schedule plus the route its agents
follow, as a chained list of edges ending at the goal node.

Scenario files are TOML; see data/scramble.toml for the reference scene.
"""

from __future__ import annotations

import hashlib
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import SCHEMA_VERSION, kernels
from .errors import ScenarioError
from .raster import EnvironmentRaster, load_raster

_EDGE_RE = re.compile(r"^E\((\d+):(\d+)\)$")


def parse_edge_name(name: str) -> tuple:
    m = _EDGE_RE.match(name)
    if not m:
        raise ScenarioError(f"bad edge name {name!r}, expected like 'E(1:2)'")
    return int(m.group(1)), int(m.group(2))


def edge_name(a: int, b: int) -> str:
    return f"E({a}:{b})"


def polygon_contains(polygon, points) -> np.ndarray:
    """Even-odd containment test, vectorized over points.

    Casts a horizontal ray to +x and counts edge crossings with the
    half-open vertical span rule, so shared vertices are counted once
    and horizontal edges never divide by zero.
    """
    poly = np.asarray(polygon, dtype=np.float64)
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    x = pts[:, 0:1]
    y = pts[:, 1:2]
    x1, y1 = poly[:, 0], poly[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    spans = (y1 <= y) != (y2 <= y)
    denom = np.where(y2 - y1 == 0.0, 1.0, y2 - y1)
    xin = x1 + (y - y1) * (x2 - x1) / denom
    return ((spans & (x < xin)).sum(axis=1) % 2).astype(bool)


@dataclass(frozen=True)
class Node:
    id: int
    anchor: tuple
    radius: float
    signal_controlled: bool = False


@dataclass(frozen=True)
class SpawnArea:
    center: tuple
    radius: float


@dataclass
class FlowRoute:
    """One pedestrian stream: where it spawns and which edges it walks."""

    flow_id: str
    edges: list
    goal_node: int
    spawn_areas: list
    spawn_interval: float = 2.0
    spawn_offset: float = 0.0


@dataclass(frozen=True)
class SignalSchedule:
    """Periodic crossing signal, softened by a sigmoid of slope k.

    The state is ~0 during red, ~1 during green, 0.5 exactly at the
    green onset and offset.
    """

    period: float
    green_start: float
    green_end: float
    steepness: float = 1.0

    def __post_init__(self):
        ok = (self.period > 0 and self.steepness > 0
              and 0.0 <= self.green_start < self.green_end < self.period)
        if not ok:
            raise ScenarioError(
                f"signal schedule invalid: period={self.period} "
                f"green=[{self.green_start}, {self.green_end}) k={self.steepness}")


def signal_state(schedule: SignalSchedule, t):
    """Signal value in (0, 1) at time t (scalar or array, seconds).

    Sum of sigmoid bumps for the current and the two adjacent cycles, so
    the value is exactly periodic and continuous across the wrap.
    """
    k = schedule.steepness
    per = schedule.period
    tp = np.mod(np.asarray(t, dtype=np.float64), per)
    flat = np.atleast_1d(tp)
    s = np.zeros_like(flat)
    for n in (-1.0, 0.0, 1.0):
        s += kernels.sigmoid(k * (flat - (schedule.green_start + n * per)))
        s -= kernels.sigmoid(k * (flat - (schedule.green_end + n * per)))
    if np.ndim(t) == 0:
        return float(s[0])
    return s.reshape(np.shape(t))


class RouteGraph:
    """Directed node/edge structure with stable one-hot orderings.

    Node order follows ascending id; edge order follows the scenario
    file. Both orders define the embedding rows used by the model, so
    they must not change once data has been generated from a scenario.
    """

    def __init__(self, nodes, edges):
        nodes = sorted(nodes, key=lambda n: n.id)
        ids = [n.id for n in nodes]
        if len(set(ids)) != len(ids):
            raise ScenarioError("duplicate node ids")
        for n in nodes:
            if not (np.isfinite(n.anchor).all() and n.radius > 0):
                raise ScenarioError(f"node {n.id} has bad anchor or radius")
        self.nodes = nodes
        self._node_row = {n.id: k for k, n in enumerate(nodes)}
        self.edges = []
        self._edge_row = {}
        for name in edges:
            a, b = parse_edge_name(name) if isinstance(name, str) else name
            if a not in self._node_row or b not in self._node_row:
                raise ScenarioError(f"edge E({a}:{b}) references unknown node")
            key = (a, b)
            if key in self._edge_row:
                raise ScenarioError(f"duplicate edge {edge_name(a, b)}")
            self._edge_row[key] = len(self.edges)
            self.edges.append(key)
        self.anchors = np.array([n.anchor for n in nodes], dtype=np.float64)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def node(self, node_id: int) -> Node:
        return self.nodes[self._node_row[node_id]]

    def node_row(self, node_id: int) -> int:
        return self._node_row[node_id]

    def edge_index(self, edge) -> int:
        key = parse_edge_name(edge) if isinstance(edge, str) else tuple(edge)
        try:
            return self._edge_row[key]
        except KeyError:
            raise ScenarioError(f"unknown edge {edge_name(*key)}") from None

    def has_edge(self, edge) -> bool:
        key = parse_edge_name(edge) if isinstance(edge, str) else tuple(edge)
        return key in self._edge_row

    def edge_name(self, index: int) -> str:
        return edge_name(*self.edges[index])

    def edge_nodes(self, index: int) -> tuple:
        return self.edges[index]

    def is_loop(self, index: int) -> bool:
        a, b = self.edges[index]
        return a == b


def edge_chain_valid(flow: FlowRoute, graph: RouteGraph) -> bool:
    """True when the flow's edges exist and chain head-to-tail."""
    if not flow.edges:
        return False
    try:
        pairs = [parse_edge_name(e) if isinstance(e, str) else tuple(e)
                 for e in flow.edges]
    except ScenarioError:
        return False
    for p in pairs:
        if not graph.has_edge(p):
            return False
    for (_, b), (a2, _) in zip(pairs, pairs[1:]):
        if b != a2:
            return False
    return True


def validate_flow(flow: FlowRoute, graph: RouteGraph) -> None:
    if not edge_chain_valid(flow, graph):
        raise ScenarioError(f"flow {flow.flow_id!r}: edges do not form a chain "
                            f"in the graph: {flow.edges}")
    last = parse_edge_name(flow.edges[-1]) if isinstance(flow.edges[-1], str) \
        else tuple(flow.edges[-1])
    if last[0] == last[1]:
        raise ScenarioError(f"flow {flow.flow_id!r}: route may not end on a loop edge")
    if last[1] != flow.goal_node:
        raise ScenarioError(f"flow {flow.flow_id!r}: goal node {flow.goal_node} "
                            f"is not the end of the last edge {flow.edges[-1]}")
    if not flow.spawn_areas:
        raise ScenarioError(f"flow {flow.flow_id!r}: no spawn areas")
    for area in flow.spawn_areas:
        if not (np.isfinite(area.center).all() and area.radius > 0):
            raise ScenarioError(f"flow {flow.flow_id!r}: bad spawn area {area}")
    if flow.spawn_interval <= 0 or flow.spawn_offset < 0:
        raise ScenarioError(f"flow {flow.flow_id!r}: bad spawn timing")


def sample_spawn(flow: FlowRoute, rng) -> np.ndarray:
    """Uniform draw from one of the flow's spawn discs (area picked
    uniformly). rng is a numpy Generator or a seed."""
    if not flow.spawn_areas:
        raise ScenarioError(f"flow {flow.flow_id!r} has no spawn areas")
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    area = flow.spawn_areas[int(gen.integers(len(flow.spawn_areas)))]
    rr = area.radius * np.sqrt(gen.random())
    th = 2.0 * np.pi * gen.random()
    return np.array([area.center[0] + rr * np.cos(th),
                     area.center[1] + rr * np.sin(th)])


@dataclass
class Scenario:
    name: str
    graph: RouteGraph
    schedule: SignalSchedule
    flows: list
    crosswalk: np.ndarray
    raster: EnvironmentRaster
    source_path: Path | None = None
    sha256: str | None = None
    _flow_map: dict = field(default_factory=dict, repr=False, init=False)

    def __post_init__(self):
        self._flow_map = {f.flow_id: f for f in self.flows}

    def flow(self, flow_id: str) -> FlowRoute:
        try:
            return self._flow_map[flow_id]
        except KeyError:
            raise ScenarioError(f"unknown flow {flow_id!r}") from None

    @property
    def flow_ids(self) -> list:
        return [f.flow_id for f in self.flows]


def _require(table: dict, key: str, where: str):
    if key not in table:
        raise ScenarioError(f"scenario {where}: missing {key!r}")
    return table[key]


def load_scenario(path) -> Scenario:
    """Parse and validate a scenario TOML file."""
    path = Path(path)
    if not path.exists():
        raise ScenarioError(f"scenario file not found: {path}")
    raw = path.read_bytes()
    try:
        doc = tomllib.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ScenarioError(f"scenario TOML unreadable: {exc}") from exc

    version = _require(doc, "schema_version", "root")
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"unsupported schema_version {version}, "
                            f"this build reads version {SCHEMA_VERSION}")
    name = _require(doc, "name", "root")

    nodes = []
    for tab in _require(doc, "node", "root"):
        nodes.append(Node(
            id=int(_require(tab, "id", "node")),
            anchor=tuple(float(v) for v in _require(tab, "anchor", "node")),
            radius=float(_require(tab, "radius", "node")),
            signal_controlled=bool(tab.get("signal", False)),
        ))
    graph = RouteGraph(nodes, _require(doc, "edges", "root"))

    sig = _require(doc, "signal", "root")
    schedule = SignalSchedule(
        period=float(_require(sig, "period", "signal")),
        green_start=float(_require(sig, "green_start", "signal")),
        green_end=float(_require(sig, "green_end", "signal")),
        steepness=float(sig.get("steepness", 1.0)),
    )

    for k in range(graph.n_edges):
        if graph.is_loop(k):
            a, _ = graph.edge_nodes(k)
            if not graph.node(a).signal_controlled:
                raise ScenarioError(f"loop edge {graph.edge_name(k)} sits on a "
                                    "node that is not signal controlled")

    flows = []
    for tab in _require(doc, "flow", "root"):
        areas = [SpawnArea(center=tuple(float(v) for v in _require(a, "center", "spawn_area")),
                           radius=float(_require(a, "radius", "spawn_area")))
                 for a in tab.get("spawn_area", [])]
        flow = FlowRoute(
            flow_id=str(_require(tab, "id", "flow")),
            edges=list(_require(tab, "edges", "flow")),
            goal_node=int(_require(tab, "goal", "flow")),
            spawn_areas=areas,
            spawn_interval=float(tab.get("spawn_interval", 2.0)),
            spawn_offset=float(tab.get("spawn_offset", 0.0)),
        )
        validate_flow(flow, graph)
        flows.append(flow)
    if not flows:
        raise ScenarioError("scenario defines no flows")
    if len(set(f.flow_id for f in flows)) != len(flows):
        raise ScenarioError("duplicate flow ids")

    cross = np.asarray(_require(doc, "crosswalk", "root")["polygon"], dtype=np.float64)
    if cross.ndim != 2 or cross.shape[0] < 3 or cross.shape[1] != 2:
        raise ScenarioError("crosswalk polygon needs at least 3 [x, y] vertices")
    if not np.all(np.isfinite(cross)):
        raise ScenarioError("crosswalk polygon has non-finite vertices")

    raster_tab = _require(doc, "raster", "root")
    raster_path = path.parent / str(_require(raster_tab, "path", "raster"))
    env = load_raster(raster_path)

    return Scenario(name=name, graph=graph, schedule=schedule, flows=flows,
                    crosswalk=cross, raster=env, source_path=path,
                    sha256=hashlib.sha256(raw).hexdigest())


def load_bundled_scenario(name: str = "scramble") -> Scenario:
    """Load one of the scenarios shipped inside the package."""
    from importlib.resources import as_file, files
    data = files("pedflow") / "data"
    with as_file(data) as d:
        return load_scenario(Path(d) / f"{name}.toml")
