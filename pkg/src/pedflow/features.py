"""Model input construction.

Every prediction step sees the scene from one agent's point of view,
as five per-step streams over a sliding window plus two global inputs:

- relative node positions (graph anchors minus agent position),
- a polar occupancy map of nearby agents (rings x sectors, rotated so
  sector 0 faces the agent's heading),
- a heading-aligned crop of the walkability raster ("bird view"),
- the current route edge (one-hot index),
- the signal state,

globally: the goal node and the collapsed edge history so far. Windows
shorter than the configured length are front-padded by replicating the
earliest record; the validity mask marks real rows but is bookkeeping
only, it is not fed to the network.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InsufficientHistory, RasterMissing, TrajectoryError
from .raster import EnvironmentRaster
from .scenario import RouteGraph, SignalSchedule, signal_state
from .trajectory import Trajectory


@dataclass(frozen=True)
class FeatureConfig:
    ring_edges: tuple = (1.0, 2.0, 3.0, 4.0)
    n_sectors: int = 8
    window: int = 20
    bird_size: int = 50
    bird_cell: float = 0.2
    history_len: int = 4
    frame_dt: float = 0.2

    @property
    def n_bins(self) -> int:
        return len(self.ring_edges) * self.n_sectors


DEFAULT_FEATURES = FeatureConfig()


@dataclass
class OccupancyMap:
    counts: np.ndarray
    ring_edges: tuple
    n_sectors: int


@dataclass
class BirdMap:
    """Heading-aligned walkability crop. Row 0 is farthest ahead, column
    0 is leftmost; cell centers sit on a bird_cell grid around the agent."""

    grid: np.ndarray
    cell: float


@dataclass
class LocalWindow:
    rel: np.ndarray      # (N, 2 * n_nodes)
    occ: np.ndarray      # (N, n_bins) float
    bird: np.ndarray     # (N, bird_size**2) float
    edge_idx: np.ndarray  # (N,) int64
    signal: np.ndarray   # (N,)
    valid: np.ndarray    # (N,) bool; padded rows are False


@dataclass
class Sample:
    goal_row: int
    edge_history: np.ndarray  # (history_len,) int64, front-padded with pad id
    window: LocalWindow
    target_dp: np.ndarray
    target_edge: int
    flow_id: str | None = None
    agent_id: str | None = None
    t: float = 0.0


def occupancy(center, heading: float, neighbors, config: FeatureConfig = DEFAULT_FEATURES) -> OccupancyMap:
    """Count neighbors into heading-aligned polar bins around center."""
    nb = np.asarray(neighbors, dtype=np.float64).reshape(-1, 2)
    rel = nb - np.asarray(center, dtype=np.float64)
    counts = kernels.occupancy_counts(rel, math.cos(heading), math.sin(heading),
                                      np.asarray(config.ring_edges), config.n_sectors)
    return OccupancyMap(counts=counts, ring_edges=tuple(config.ring_edges),
                        n_sectors=config.n_sectors)


def bird_map(center, heading: float, raster: EnvironmentRaster,
             config: FeatureConfig = DEFAULT_FEATURES) -> BirdMap:
    grid = bird_grids(np.asarray(center, dtype=np.float64)[None, :],
                      np.array([heading]), raster, config)[0]
    return BirdMap(grid=grid.reshape(config.bird_size, config.bird_size),
                   cell=config.bird_cell)


def bird_grids(centers, headings, raster: EnvironmentRaster,
               config: FeatureConfig = DEFAULT_FEATURES) -> np.ndarray:
    """Batched bird-view crops, flattened: (n, bird_size**2)."""
    if raster is None:
        raise RasterMissing("bird-view maps need an environment raster")
    s = config.bird_size
    half = (s - 1) / 2.0
    fwd = (half - np.arange(s)) * config.bird_cell   # row axis, ahead positive
    lat = (half - np.arange(s)) * config.bird_cell   # col axis, left positive
    f = np.broadcast_to(fwd[:, None], (s, s)).ravel()
    l = np.broadcast_to(lat[None, :], (s, s)).ravel()
    cos = np.cos(headings)[:, None]
    sin = np.sin(headings)[:, None]
    cx = np.asarray(centers)[:, 0:1]
    cy = np.asarray(centers)[:, 1:2]
    px = cx + f[None, :] * cos - l[None, :] * sin
    py = cy + f[None, :] * sin + l[None, :] * cos
    pts = np.stack([px, py], axis=-1)
    return raster.sample(pts.reshape(-1, 2)).reshape(len(headings), s * s)


def relative_positions(position, graph: RouteGraph) -> np.ndarray:
    """Node anchors relative to the agent, (n_nodes, 2)."""
    return graph.anchors - np.asarray(position, dtype=np.float64)


def heading_angles(traj: Trajectory, graph: RouteGraph) -> np.ndarray:
    """Per-record headings: direction of the last nonzero displacement,
    falling back to the direction toward the current edge's target node
    (0 if that is degenerate too)."""
    th = np.zeros(traj.n)
    current = None
    for k in range(traj.n):
        if k > 0:
            d = traj.xy[k] - traj.xy[k - 1]
            if math.hypot(d[0], d[1]) > 1e-9:
                current = math.atan2(d[1], d[0])
        if current is not None:
            th[k] = current
        else:
            th[k] = _fallback_heading(traj, k, graph)
    return th


def _fallback_heading(traj: Trajectory, k: int, graph: RouteGraph) -> float:
    if traj.edges is None or not traj.edges[k]:
        return 0.0
    _, to_node = graph.edge_nodes(graph.edge_index(str(traj.edges[k])))
    d = graph.node(to_node).anchor - traj.xy[k]
    if math.hypot(d[0], d[1]) <= 1e-9:
        return 0.0
    return math.atan2(d[1], d[0])


def collapse_edge_history(edge_indices, history_len: int, pad_id: int) -> np.ndarray:
    """Distinct consecutive edges, most recent last, front-padded."""
    seq = []
    for e in edge_indices:
        if not seq or seq[-1] != e:
            seq.append(int(e))
    seq = seq[-history_len:]
    out = np.full(history_len, pad_id, dtype=np.int64)
    if seq:
        out[-len(seq):] = seq
    return out


def build_sample(traj: Trajectory, t: int, graph: RouteGraph,
                 schedule: SignalSchedule, raster: EnvironmentRaster,
                 neighbors_at_each_step,
                 config: FeatureConfig = DEFAULT_FEATURES) -> Sample:
    """Assemble the model input/target pair for one trajectory record.

    t indexes the (5 FPS) records; the target is the step to record
    t + 1. neighbors_at_each_step holds, per record, the positions of
    the other agents present at that time.
    """
    if traj.n < 1:
        raise InsufficientHistory(f"{traj.agent_id}: empty trajectory")
    if t < 0 or t + 1 >= traj.n:
        raise InsufficientHistory(
            f"{traj.agent_id}: record {t} has no successor (n={traj.n})")
    if traj.edges is None:
        raise TrajectoryError(f"{traj.agent_id}: needs edge labels; annotate first")
    if traj.goal_node is None:
        raise TrajectoryError(f"{traj.agent_id}: goal node unknown; annotate first")
    if len(neighbors_at_each_step) != traj.n:
        raise TrajectoryError(
            f"{traj.agent_id}: neighbor list length {len(neighbors_at_each_step)} "
            f"does not match {traj.n} records")

    n = config.window
    first = max(0, t - n + 1)
    idx = list(range(first, t + 1))
    pad = n - len(idx)
    rows = [idx[0]] * pad + idx

    headings = heading_angles(traj, graph)
    edge_rows = np.empty(len(rows), dtype=np.int64)
    occ = np.empty((n, config.n_bins))
    rel = np.empty((n, graph.n_nodes * 2))
    bird = np.empty((n, config.bird_size ** 2))
    sig = np.empty(n)
    for w, j in enumerate(rows):
        name = str(traj.edges[j])
        if not name:
            raise TrajectoryError(f"{traj.agent_id}: record {j} unlabeled")
        edge_rows[w] = graph.edge_index(name)
        rel[w] = relative_positions(traj.xy[j], graph).ravel()
        occ[w] = occupancy(traj.xy[j], headings[j], neighbors_at_each_step[j],
                           config).counts
        bird[w] = bird_grids(traj.xy[j][None], headings[j:j + 1], raster, config)[0]
        sig[w] = signal_state(schedule, float(traj.t[j]))
    valid = np.zeros(n, dtype=bool)
    valid[pad:] = True

    window = LocalWindow(rel=rel, occ=occ, bird=bird, edge_idx=edge_rows,
                         signal=sig, valid=valid)
    hist_src = [graph.edge_index(str(e)) for e in traj.edges[:t + 1]]
    history = collapse_edge_history(hist_src, config.history_len,
                                    pad_id=graph.n_edges)
    return Sample(
        goal_row=graph.node_row(traj.goal_node),
        edge_history=history,
        window=window,
        target_dp=traj.xy[t + 1] - traj.xy[t],
        target_edge=int(graph.edge_index(str(traj.edges[t + 1]))),
        flow_id=traj.flow_id,
        agent_id=traj.agent_id,
        t=float(traj.t[t]),
    )
