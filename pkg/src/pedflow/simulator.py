"""Closed-loop crowd simulation.

Each step reads a frozen snapshot of every position, embeds the newest
record of each simulated agent once, runs the model over per-agent
sliding windows, and applies predicted displacement plus rule-based
avoidance synchronously. The clock lives on an integer frame counter,
so record times sit exactly on the 0.2 s lattice the training data
uses.

Predicted edge transitions are gated for route consistency: an agent
may stay on its edge, advance to the next one, or hop over a waiting
loop, and any other prediction holds the current edge (counted on the
state, logged at debug level). Replacement mode replays a reference
trajectory set verbatim while a chosen subset of its agents is re-run
through the model; replayed walkers act as neighbors only.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .dataset import frame_keys
from .errors import CoincidentAgents, ModelScenarioMismatch
from .features import DEFAULT_FEATURES, FeatureConfig, bird_grids
from .net.model import embed_step, predict_embedded
from .net.params import ModelParams
from .scenario import FlowRoute, Scenario, sample_spawn, signal_state
from .trajectory import Trajectory

logger = logging.getLogger(__name__)

AVOID_A = 10.0
AVOID_B = 0.8       # m, repulsion half-strength distance
AVOID_C = 2.5       # m at contact, before the step cap bites
STEP_CAP = 0.6      # m per step; 3 m/s at 5 FPS
COINCIDENT_EPS = 1e-9


@dataclass
class SimAgent:
    """One simulated walker and everything the model needs to see it."""

    aid: str
    flow_id: str
    route: list             # edge indices along the flow
    cur: int                # position within route
    goal_node: int
    status: str = "active"
    ts: list = field(default_factory=list)
    ps: list = field(default_factory=list)
    labels: list = field(default_factory=list)
    hist_seq: list = field(default_factory=list)  # distinct consecutive edges
    heading: float | None = None
    estreams: dict = field(default_factory=dict)  # stream -> ring of rows

    def record(self, t: float, pos: np.ndarray, edge_name: str, edge_idx: int):
        self.ts.append(t)
        self.ps.append(pos.copy())
        self.labels.append(edge_name)
        if not self.hist_seq or self.hist_seq[-1] != edge_idx:
            self.hist_seq.append(edge_idx)


@dataclass
class SimState:
    scenario: Scenario
    features: FeatureConfig
    rng: np.random.Generator
    frame: int = 0
    agents: list = field(default_factory=list)
    active: list = field(default_factory=list)
    next_spawn: dict = field(default_factory=dict)
    counters: dict = field(default_factory=dict)
    spawn_until: float = 0.0
    timeout: float = 300.0
    step_cap: float = STEP_CAP
    replay: dict = field(default_factory=dict)    # frame -> (m, 2) positions
    held_transitions: int = 0
    coincidences: int = 0

    @property
    def clock(self) -> float:
        return self.frame * self.features.frame_dt


def _repulsion(r, a, b, c):
    r = np.atleast_1d(np.asarray(r, dtype=np.float64))
    return c * kernels.sigmoid(-a * (r - b))


def _clamp(v, cap: float):
    n = math.hypot(v[0], v[1])
    if n > cap:
        return v * (cap / n)
    return v


def _random_unit(rng) -> np.ndarray:
    th = rng.uniform(0.0, 2.0 * np.pi)
    return np.array([np.cos(th), np.sin(th)])


def avoidance(p_i, others, a: float = AVOID_A, b: float = AVOID_B,
              c: float = AVOID_C, cap: float = STEP_CAP, rng=None) -> np.ndarray:
    """Rule-based collision avoidance displacement for one agent.

    Sums c/(1+exp(a(r-b))) directed away from each neighbor and clamps
    the result to the step cap. A neighbor closer than 1e-9 m has no
    usable direction: with an rng the push direction is drawn at random
    (and logged), otherwise CoincidentAgents is raised.
    """
    p = np.asarray(p_i, dtype=np.float64)
    nb = np.asarray(others, dtype=np.float64).reshape(-1, 2)
    out = np.zeros(2)
    if len(nb):
        rel = nb - p
        r = np.hypot(rel[:, 0], rel[:, 1])
        close = r < COINCIDENT_EPS
        if np.any(close):
            if rng is None:
                raise CoincidentAgents(
                    f"{int(close.sum())} neighbor(s) coincide "
                    f"with ({p[0]}, {p[1]})")
            logger.debug("coincident neighbors at %s resolved randomly", p)
            contact = float(_repulsion(0.0, a, b, c)[0])
            for _ in range(int(close.sum())):
                out += contact * _random_unit(rng)
        far = ~close
        s = _repulsion(r[far], a, b, c)
        out += ((-rel[far] / r[far, None]) * s[:, None]).sum(axis=0)
    return _clamp(out, cap)


def check_model(model: ModelParams, scenario: Scenario,
                features: FeatureConfig = DEFAULT_FEATURES) -> None:
    """Reject a checkpoint whose dimensions cannot have come from this
    scenario/feature pairing."""
    cfg = model.config
    want = dict(n_nodes=scenario.graph.n_nodes, n_edges=scenario.graph.n_edges,
                window=features.window, history_len=features.history_len,
                n_bins=features.n_bins, bird_pixels=features.bird_size ** 2)
    bad = [f"{k}: model has {getattr(cfg, k)}, scenario needs {v}"
           for k, v in want.items() if getattr(cfg, k) != v]
    if bad:
        raise ModelScenarioMismatch("; ".join(bad))


def new_state(scenario: Scenario, seed: int = 0, *, spawn_until: float = 0.0,
              timeout: float = 300.0, step_cap: float = STEP_CAP,
              features: FeatureConfig = DEFAULT_FEATURES) -> SimState:
    state = SimState(scenario=scenario, features=features,
                     rng=np.random.default_rng(seed), spawn_until=spawn_until,
                     timeout=timeout, step_cap=step_cap)
    for flow in scenario.flows:
        state.next_spawn[flow.flow_id] = flow.spawn_offset
        state.counters[flow.flow_id] = 0
    return state


def _spawn_agent(state: SimState, flow: FlowRoute, pos=None, aid=None) -> SimAgent:
    graph = state.scenario.graph
    seq = state.counters[flow.flow_id]
    state.counters[flow.flow_id] = seq + 1
    ag = SimAgent(
        aid=aid if aid is not None else f"{flow.flow_id}_{seq:04d}",
        flow_id=flow.flow_id,
        route=[graph.edge_index(e) for e in flow.edges],
        cur=0,
        goal_node=flow.goal_node,
    )
    ag.estreams = {s: deque(maxlen=state.features.window)
                   for s in ("rel", "occ", "bird", "edge", "sig")}
    p = sample_spawn(flow, state.rng) if pos is None else \
        np.asarray(pos, dtype=np.float64)
    ag.record(state.clock, p, flow.edges[0], ag.route[0])
    state.agents.append(ag)
    state.active.append(ag)
    return ag


def _agent_heading(ag: SimAgent, graph) -> float:
    """Mirror of the dataset heading rule: direction of the last
    nonzero displacement, else toward the current edge's target node."""
    if len(ag.ps) > 1:
        d = ag.ps[-1] - ag.ps[-2]
        if math.hypot(d[0], d[1]) > 1e-9:
            ag.heading = math.atan2(d[1], d[0])
    if ag.heading is not None:
        return ag.heading
    _, to_node = graph.edge_nodes(ag.route[ag.cur])
    d = graph.node(to_node).anchor - ag.ps[-1]
    if math.hypot(d[0], d[1]) <= 1e-9:
        return 0.0
    return math.atan2(d[1], d[0])


def _pad_hist(seq, history_len: int, pad_id: int) -> list:
    out = [pad_id] * history_len
    tail = seq[-history_len:]
    if tail:
        out[-len(tail):] = tail
    return out


def _gate_edge(state: SimState, ag: SimAgent, want: int) -> int:
    """Accept stay/advance/loop-hop transitions, hold anything else."""
    route, cur = ag.route, ag.cur
    if want == route[cur]:
        return cur
    if cur + 1 < len(route) and want == route[cur + 1]:
        return cur + 1
    if (cur + 2 < len(route) and want == route[cur + 2]
            and state.scenario.graph.is_loop(route[cur + 1])):
        return cur + 2
    state.held_transitions += 1
    logger.debug("%s: predicted edge %s skips the route at %s, holding",
                 ag.aid, state.scenario.graph.edge_name(want),
                 state.scenario.graph.edge_name(route[cur]))
    return cur


def _as_predictor(model):
    if isinstance(model, ModelParams):
        return lambda streams, hist, goal: predict_embedded(
            model, streams, hist, goal)
    if callable(model):
        return model
    raise TypeError(f"model must be ModelParams or callable, got {type(model)}")


def step(state: SimState, model) -> SimState:
    """Advance the state by one frame (0.2 s).

    Spawns due agents, featurizes every active agent against a frozen
    snapshot of all positions (simulated and replayed), runs the model
    once over the batch, and applies displacement, avoidance, edge
    bookkeeping, and arrival/timeout transitions synchronously.
    """
    predictor = _as_predictor(model)
    sc = state.scenario
    graph = sc.graph
    fc = state.features
    frame = state.frame
    t = state.clock

    for flow in sc.flows:
        while (state.next_spawn[flow.flow_id] <= t + 1e-9
               and state.next_spawn[flow.flow_id] < state.spawn_until):
            _spawn_agent(state, flow)
            state.next_spawn[flow.flow_id] += flow.spawn_interval

    for ag in list(state.active):
        if t - ag.ts[0] >= state.timeout:
            ag.status = "timeout"
            state.active.remove(ag)

    live = list(state.active)
    state.frame = frame + 1
    if not live:
        return state

    pos = np.array([ag.ps[-1] for ag in live])
    replay = state.replay.get(frame)
    if replay is not None and len(replay):
        all_pos = np.vstack([pos, replay])
    else:
        all_pos = pos

    # embed this frame's record for every live agent
    headings = np.array([_agent_heading(ag, graph) for ag in live])
    pad = np.zeros(len(all_pos) - len(live))
    occ = kernels.occupancy_counts_all(
        all_pos, np.concatenate([np.cos(headings), pad]),
        np.concatenate([np.sin(headings), pad]),
        np.asarray(fc.ring_edges), fc.n_sectors)[:len(live)].astype(np.float64)
    rel = (graph.anchors[None, :, :] - pos[:, None, :]).reshape(len(live), -1)
    bird = bird_grids(pos, headings, sc.raster, fc)
    edge_idx = np.array([ag.route[ag.cur] for ag in live], dtype=np.int64)
    sig = signal_state(sc.schedule, np.full(len(live), t))
    if isinstance(model, ModelParams):
        emb = embed_step(model, rel, occ, bird, edge_idx, sig)
    else:
        # callable predictors get the raw features per step
        emb = {"rel": rel, "occ": occ, "bird": bird,
               "edge": edge_idx[:, None].astype(np.float64),
               "sig": np.asarray(sig, dtype=np.float64).reshape(-1, 1)}
    for i, ag in enumerate(live):
        for s in ag.estreams:
            ag.estreams[s].append(emb[s][i])

    streams = {}
    for s in ("rel", "occ", "bird", "edge", "sig"):
        rows = []
        for ag in live:
            ring = list(ag.estreams[s])
            rows.append([ring[0]] * (fc.window - len(ring)) + ring)
        streams[s] = np.array(rows)
    hist = np.array([_pad_hist(ag.hist_seq, fc.history_len, graph.n_edges)
                     for ag in live], dtype=np.int64)
    goal = np.array([graph.node_row(ag.goal_node) for ag in live],
                    dtype=np.int64)

    pred = predictor(streams, hist, goal)

    disp, ncoinc = kernels.avoidance_terms(all_pos, AVOID_A, AVOID_B, AVOID_C,
                                           COINCIDENT_EPS)
    contact = float(_repulsion(0.0, AVOID_A, AVOID_B, AVOID_C)[0])
    t_next = state.frame * fc.frame_dt
    for i, ag in enumerate(live):
        av = disp[i]
        if ncoinc[i]:
            state.coincidences += int(ncoinc[i])
            logger.debug("%s: %d coincident neighbor(s), random push",
                         ag.aid, int(ncoinc[i]))
            for _ in range(int(ncoinc[i])):
                av = av + contact * _random_unit(state.rng)
        av = _clamp(av, state.step_cap)
        move = _clamp(pred.delta_p[i] + av, state.step_cap)
        newpos = ag.ps[-1] + move

        ag.cur = _gate_edge(state, ag, int(pred.edge_argmax[i]))
        e = ag.route[ag.cur]
        ag.record(t_next, newpos, graph.edge_name(e), e)

        gnode = graph.node(ag.goal_node)
        d = newpos - gnode.anchor
        if float(d @ d) <= gnode.radius ** 2:
            ag.status = "arrived"
            state.active.remove(ag)
    return state


def _emit(agents, graph) -> list:
    out = []
    for ag in agents:
        out.append(Trajectory(
            agent_id=ag.aid,
            t=np.array(ag.ts),
            xy=np.array(ag.ps).reshape(len(ag.ts), 2),
            edges=np.array(ag.labels, dtype="U16"),
            flow_id=ag.flow_id,
            goal_node=ag.goal_node,
            status=ag.status,
        ))
    return out


def run(scenario: Scenario, model, duration: float = 280.0, seed: int = 0, *,
        timeout: float = 300.0, drain: bool = True,
        step_cap: float = STEP_CAP,
        features: FeatureConfig = DEFAULT_FEATURES, on_step=None) -> list:
    """Simulate the scenario's flows for `duration` seconds of spawning.

    With drain the clock keeps running (up to the timeout horizon)
    until every spawned agent has arrived or timed out. Returns one
    labeled Trajectory per agent. on_step, if given, is called with the
    state after every step (debug taps, progress meters).
    """
    if isinstance(model, ModelParams):
        check_model(model, scenario, features)
    state = new_state(scenario, seed, spawn_until=duration, timeout=timeout,
                      step_cap=step_cap, features=features)
    dt = features.frame_dt
    n_frames = int(round(duration / dt))
    hard = int(round((duration + timeout) / dt))
    while True:
        if state.frame >= n_frames and drain and not state.active:
            break
        if state.frame >= (hard if drain else n_frames):
            break
        step(state, model)
        if on_step is not None:
            on_step(state)
    return _emit(state.agents, scenario.graph)


def run_replacement(scenario: Scenario, model, reference: list,
                    replace_ids, seed: int = 0, *, timeout: float = 300.0,
                    step_cap: float = STEP_CAP,
                    features: FeatureConfig = DEFAULT_FEATURES,
                    on_step=None) -> list:
    """Re-simulate a chosen subset of a recorded crowd.

    Reference trajectories must sit on the 0.2 s lattice. Agents named
    in replace_ids restart from their first recorded position and walk
    under the model; everyone else replays verbatim and is visible to
    the simulated agents as neighbors only. Output preserves reference
    order, with replaced entries swapped for their simulated runs.
    """
    replace = set(replace_ids)
    unknown = replace - {tr.agent_id for tr in reference}
    if unknown:
        raise ValueError(f"replace_ids not in reference: {sorted(unknown)}")
    if not replace:
        return [tr.copy() for tr in reference]
    if isinstance(model, ModelParams):
        check_model(model, scenario, features)

    dt = features.frame_dt
    keys = {tr.agent_id: frame_keys(tr, dt) for tr in reference}
    first = min(int(k[0]) for k in keys.values())
    last = max(int(k[-1]) for k in keys.values())

    by_frame: dict = {}
    for tr in reference:
        if tr.agent_id in replace:
            continue
        for j, k in enumerate(keys[tr.agent_id]):
            by_frame.setdefault(int(k), []).append(tr.xy[j])
    state = new_state(scenario, seed, spawn_until=0.0, timeout=timeout,
                      step_cap=step_cap, features=features)
    state.frame = first
    state.replay = {k: np.array(v) for k, v in by_frame.items()}

    starts: dict = {}
    for tr in reference:
        if tr.agent_id in replace:
            starts.setdefault(int(keys[tr.agent_id][0]), []).append(tr)

    sim_by_id = {}
    hard = last + int(round(timeout / dt))
    while True:
        for tr in starts.get(state.frame, []):
            ag = _spawn_agent(state, scenario.flow(tr.flow_id),
                              pos=tr.xy[0], aid=tr.agent_id)
            sim_by_id[ag.aid] = ag
        if state.frame > last and not state.active:
            break
        if state.frame >= hard:
            break
        step(state, model)
        if on_step is not None:
            on_step(state)

    sim_trajs = {tr.agent_id: tr
                 for tr in _emit(sim_by_id.values(), scenario.graph)}
    return [sim_trajs[tr.agent_id] if tr.agent_id in replace else tr.copy()
            for tr in reference]
