"""Rule-based reference crowd.

Generates trajectories by walking agents along their flow routes with a
simple behavior stack: head for the next route node at a personal
preferred speed, repel from nearby agents, dodge left out of head-on
deadlocks, and queue at signal nodes until green. Output is recorded at
a high internal rate so the normal annotate/resample pipeline applies.

An agent approaching a signal node keeps reassessing the light until it
physically steps onto the crosswalk; once inside the polygon it is
committed and finishes the crossing regardless of the light. Agents
standing at red are immovable, which keeps queue pressure from shoving
the front row onto the road.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .scenario import FlowRoute, Scenario, polygon_contains, sample_spawn, signal_state
from .trajectory import Trajectory

SPEED_MEAN = 1.34   # m/s, preferred walking speed distribution
SPEED_STD = 0.26
SPEED_MIN = 0.5
SPEED_MAX = 2.2
STEP_CAP = 3.0      # m/s, hard cap on the realized per-frame velocity
AVOID_STEEPNESS = 10.0
AVOID_RADIUS = 0.8   # m, repulsion half-strength distance
AVOID_GAIN = 2.5     # m/s at contact; exceeds SPEED_MAX so a fast walker
                     # cannot push through a standing queue
COINCIDENT_EPS = 1e-9
DODGE_GAIN = 1.0    # head-on deadlock sidestep factor
CLEARANCE_FACTOR = 1.2  # safety margin on the estimated crossing time
CLEARANCE_BUFFER = 2.0  # s; a crossing must fit this far inside green


@dataclass
class _Agent:
    aid: str
    flow: FlowRoute
    route: list
    pos: np.ndarray
    pref: float
    spawn_t: float
    cur: int = 0
    status: str = "active"
    ts: list = field(default_factory=list)
    ps: list = field(default_factory=list)


def _left_perp(u: np.ndarray) -> np.ndarray:
    return np.array([-u[1], u[0]])


def _spawn_slots(flow: FlowRoute, rank: int):
    t = flow.spawn_offset
    while True:
        yield (t, rank, flow)
        t += flow.spawn_interval


def generate_synthetic(scenario: Scenario, duration: float = 280.0,
                       seed: int = 0, fps: int = 30, timeout: float = 300.0,
                       drain: bool = True, n_agents: int | None = None) -> list:
    """Simulate the scenario's flows.

    Agents spawn for `duration` seconds, or, when `n_agents` is given
    instead, until that many have entered (slots taken across flows in
    time order, ties by flow declaration order). With drain the clock
    then runs on until everyone has arrived or timed out, so every
    trajectory is complete. Returns one Trajectory per agent (ids
    ``<flow>_<seq>``), recorded at `fps`, with flow and goal filled in
    and status set to arrived, timeout, or active (drain off, still
    walking at the end).
    """
    rng = np.random.default_rng(seed)
    dt = 1.0 / fps
    graph = scenario.graph

    spawns: dict = {}
    if n_agents is None:
        for flow in scenario.flows:
            t_sp = flow.spawn_offset
            while t_sp < duration:
                spawns.setdefault(int(round(t_sp * fps)), []).append(flow)
                t_sp += flow.spawn_interval
    else:
        slots = heapq.merge(*(_spawn_slots(f, i)
                              for i, f in enumerate(scenario.flows)))
        duration = 0.0
        for t_sp, _, flow in itertools.islice(slots, n_agents):
            spawns.setdefault(int(round(t_sp * fps)), []).append(flow)
            duration = t_sp

    counters = {f.flow_id: 0 for f in scenario.flows}
    agents: list = []
    active: list = []
    n_frames = int(round(duration * fps))
    hard_stop = int(round((duration + timeout) * fps))

    k = 0
    while True:
        if k > n_frames and drain and not active:
            break
        if k > (hard_stop if drain else n_frames):
            break
        frame = k
        t = frame * dt
        k += 1
        for flow in spawns.get(frame, []):
            seq = counters[flow.flow_id]
            counters[flow.flow_id] = seq + 1
            ag = _Agent(
                aid=f"{flow.flow_id}_{seq:04d}",
                flow=flow,
                route=[graph.edge_index(e) for e in flow.edges],
                pos=sample_spawn(flow, rng),
                pref=float(np.clip(rng.normal(SPEED_MEAN, SPEED_STD),
                                   SPEED_MIN, SPEED_MAX)),
                spawn_t=t,
            )
            agents.append(ag)
            active.append(ag)

        if not active:
            continue

        sig = float(signal_state(scenario.schedule, t))
        pos = np.array([ag.pos for ag in active])
        disp, ncoinc = kernels.avoidance_terms(pos, AVOID_STEEPNESS,
                                               AVOID_RADIUS, AVOID_GAIN,
                                               COINCIDENT_EPS)

        still_active = []
        for i, ag in enumerate(active):
            # route bookkeeping against the current position
            moved = True
            while moved and ag.status == "active":
                moved = False
                e = ag.route[ag.cur]
                if graph.is_loop(e):
                    if polygon_contains(scenario.crosswalk, ag.pos[None])[0]:
                        ag.cur += 1  # stepped onto the crossing: committed
                        moved = True
                else:
                    to_node = graph.node(graph.edge_nodes(e)[1])
                    d = ag.pos - to_node.anchor
                    if float(d @ d) <= to_node.radius ** 2:
                        if ag.cur == len(ag.route) - 1:
                            ag.status = "arrived"
                        else:
                            ag.cur += 1
                            moved = True

            ag.ts.append(t)
            ag.ps.append(ag.pos.copy())
            if ag.status == "active" and t - ag.spawn_t >= timeout:
                ag.status = "timeout"
            if ag.status != "active":
                continue
            still_active.append(ag)

            # target: the next traversal node; holders stand on red
            e = ag.route[ag.cur]
            if graph.is_loop(e):
                if sig < 0.5:
                    continue  # red: stand fast, ignore crowd pressure
                across = graph.node(graph.edge_nodes(ag.route[ag.cur + 1])[1]).anchor
                remaining = scenario.schedule.green_end - t % scenario.schedule.period
                need = float(np.hypot(*(across - ag.pos))) / ag.pref
                if remaining < CLEARANCE_FACTOR * need + CLEARANCE_BUFFER:
                    continue  # could not finish before red: wait a cycle
                target = across
            else:
                target = graph.node(graph.edge_nodes(e)[1]).anchor
            d = target - ag.pos
            dist = float(np.hypot(d[0], d[1]))
            if dist < 1e-9:
                continue
            u = d / dist
            v = ag.pref * u + disp[i]
            along = float(disp[i] @ u)
            if along < 0.0:
                v = v + DODGE_GAIN * (-along) * _left_perp(u)
            speed = float(np.hypot(v[0], v[1]))
            if speed > STEP_CAP:
                v *= STEP_CAP / speed
            cand = ag.pos + v * dt
            if (sig < 0.5
                    and any(graph.is_loop(r) for r in ag.route[ag.cur:])
                    and polygon_contains(scenario.crosswalk, cand[None])[0]):
                # red light: an uncommitted agent (its waiting edge is
                # still ahead) may not step onto the crosswalk, however
                # hard the crowd pushes
                continue
            ag.pos = cand
            if ncoinc[i]:
                ag.pos = ag.pos + rng.normal(0.0, 1e-3, 2)
        active = still_active

    out = []
    for ag in agents:
        out.append(Trajectory(
            agent_id=ag.aid,
            t=np.array(ag.ts),
            xy=np.array(ag.ps).reshape(len(ag.ts), 2),
            flow_id=ag.flow.flow_id,
            goal_node=ag.flow.goal_node,
            status=ag.status,
        ))
    return out
