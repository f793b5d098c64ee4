"""Trajectory records and their CSV form.

A trajectory is one agent's timed position sequence, optionally labeled
with the route-graph edge the agent is walking at each record. The CSV
interchange format has the header ``t,id,x,y`` plus an optional
``edge`` column; rows are sorted by time then id, positions are written
with full round-trip precision.
"""

from __future__ import annotations

import csv as _csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import TrajectoryError

MAX_SPEED = 4.0  # m/s; anything faster is a tracking artifact


@dataclass
class Trajectory:
    agent_id: str
    t: np.ndarray
    xy: np.ndarray
    edges: np.ndarray | None = None
    flow_id: str | None = None
    goal_node: int | None = None
    status: str | None = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64)
        self.xy = np.asarray(self.xy, dtype=np.float64)
        if self.xy.shape != (len(self.t), 2):
            raise TrajectoryError(
                f"{self.agent_id}: positions {self.xy.shape} do not match "
                f"{len(self.t)} timestamps")
        if self.edges is not None:
            self.edges = np.asarray(self.edges)
            if self.edges.shape != self.t.shape:
                raise TrajectoryError(f"{self.agent_id}: edge labels misaligned")

    @property
    def n(self) -> int:
        return len(self.t)

    def copy(self) -> "Trajectory":
        return Trajectory(self.agent_id, self.t.copy(), self.xy.copy(),
                          None if self.edges is None else self.edges.copy(),
                          self.flow_id, self.goal_node, self.status)


def validate_trajectory(traj: Trajectory, max_speed: float = MAX_SPEED) -> None:
    """Raise TrajectoryError on empty input, non-finite or non-monotone
    records, or implausible inter-record speeds."""
    if traj.n == 0:
        raise TrajectoryError(f"{traj.agent_id}: empty trajectory")
    if not (np.all(np.isfinite(traj.t)) and np.all(np.isfinite(traj.xy))):
        raise TrajectoryError(f"{traj.agent_id}: non-finite records")
    dt = np.diff(traj.t)
    if np.any(dt <= 0):
        k = int(np.argmax(dt <= 0))
        raise TrajectoryError(
            f"{traj.agent_id}: timestamps not strictly increasing at row {k + 1}")
    if traj.n > 1:
        speed = np.linalg.norm(np.diff(traj.xy, axis=0), axis=1) / dt
        if np.any(speed > max_speed):
            k = int(np.argmax(speed > max_speed))
            raise TrajectoryError(
                f"{traj.agent_id}: speed {speed[k]:.2f} m/s at row {k + 1} "
                f"exceeds {max_speed} m/s")


def write_trajectories(path, trajectories, include_edges: bool | None = None) -> None:
    """Write trajectories to one CSV. Edge column is included when any
    trajectory has labels (or as forced by include_edges)."""
    path = Path(path)
    if include_edges is None:
        include_edges = any(tr.edges is not None for tr in trajectories)
    rows = []
    for tr in trajectories:
        for k in range(tr.n):
            edge = ""
            if include_edges and tr.edges is not None:
                edge = str(tr.edges[k])
            rows.append((tr.t[k], tr.agent_id, tr.xy[k, 0], tr.xy[k, 1], edge))
    rows.sort(key=lambda r: (r[0], r[1]))
    with open(path, "w", newline="") as fh:
        w = _csv.writer(fh, lineterminator="\n")
        header = ["t", "id", "x", "y"] + (["edge"] if include_edges else [])
        w.writerow(header)
        for t, aid, x, y, edge in rows:
            rec = [f"{t:.6f}", aid, repr(float(x)), repr(float(y))]
            if include_edges:
                rec.append(edge)
            w.writerow(rec)


def read_trajectories(path) -> list:
    """Read a trajectory CSV back into per-agent Trajectory objects,
    ordered by first appearance of each agent in the (time-sorted) file."""
    path = Path(path)
    if not path.exists():
        raise TrajectoryError(f"trajectory file not found: {path}")
    with open(path, newline="") as fh:
        reader = _csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TrajectoryError(f"{path}: empty file, expected a header") from None
        if header[:4] != ["t", "id", "x", "y"]:
            raise TrajectoryError(
                f"{path}: header must start with t,id,x,y, got {','.join(header)}")
        has_edge = len(header) > 4 and header[4] == "edge"
        per_agent: dict = {}
        for ln, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 4:
                raise TrajectoryError(f"{path}:{ln}: expected at least 4 columns")
            try:
                t = float(row[0])
                x = float(row[2])
                y = float(row[3])
            except ValueError as exc:
                raise TrajectoryError(f"{path}:{ln}: {exc}") from exc
            edge = row[4] if has_edge and len(row) > 4 else ""
            per_agent.setdefault(row[1], []).append((t, x, y, edge))
    out = []
    for aid, recs in per_agent.items():
        recs.sort(key=lambda r: r[0])
        t = np.array([r[0] for r in recs])
        xy = np.array([[r[1], r[2]] for r in recs])
        edges = None
        if has_edge:
            edges = np.array([r[3] for r in recs], dtype="U16")
        out.append(Trajectory(agent_id=aid, t=t, xy=xy, edges=edges))
    return out


def resolve_flows(trajectories, scenario) -> None:
    """Fill flow_id and goal_node in place for agents whose id follows
    the ``<flow>_<seq>`` naming convention."""
    for tr in trajectories:
        if tr.flow_id is not None:
            continue
        prefix = tr.agent_id.rsplit("_", 1)[0]
        if prefix in scenario.flow_ids:
            tr.flow_id = prefix
            tr.goal_node = scenario.flow(prefix).goal_node
