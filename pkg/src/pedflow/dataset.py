"""Dataset assembly from labeled trajectories.

Three stages sit between raw tracks and training batches. The route
annotator walks each agent along its flow and labels every record with
the edge being traversed, including the waiting (loop) edges at signal
nodes. The resampler snaps trajectories onto the 5 FPS frame lattice by
nearest-record selection. The extractor then turns every labeled record
with a successor into one sample, computing per-frame features once and
letting overlapping windows share them through an index table, which
keeps the memory for the bird crops flat in the number of records
rather than records times window length.
"""

from __future__ import annotations

import json
import zipfile
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import SCHEMA_VERSION, kernels
from .errors import (DataError, NoTransitions, RateTooLow, RouteMismatch,
                     TrajectoryError)
from .features import (DEFAULT_FEATURES, FeatureConfig, bird_grids,
                       collapse_edge_history, heading_angles)
from .scenario import Scenario, signal_state
from .trajectory import Trajectory

STOP_SPEED = 0.2   # m/s; slower counts as standing still
LATTICE_TOL = 1e-6  # s; how far off the frame lattice a timestamp may sit


def _speeds(traj: Trajectory) -> np.ndarray:
    """Forward-difference speed per record; the last record reuses the
    previous value."""
    v = np.zeros(traj.n)
    if traj.n > 1:
        dt = np.diff(traj.t)
        v[:-1] = np.linalg.norm(np.diff(traj.xy, axis=0), axis=1) / dt
        v[-1] = v[-2]
    return v


def annotate_edges(traj: Trajectory, scenario: Scenario) -> Trajectory:
    """Label every record with the route edge being walked.

    Crossing a node means leaving its disc: the label advances when the
    agent exits the region of the current edge's target node. Waiting
    edges (loops) are entered when the agent stands inside a red-signal
    node region, and left once it either moves on green or leaves the
    region. A loop the agent never waited on is skipped at region exit.

    Returns a labeled copy. Raises RouteMismatch when the agent reaches
    its goal region without the walk having consumed the route.
    """
    if traj.n == 0:
        raise TrajectoryError(f"{traj.agent_id}: empty trajectory")
    if traj.flow_id is None:
        raise TrajectoryError(
            f"{traj.agent_id}: flow unknown; run resolve_flows first")
    flow = scenario.flow(traj.flow_id)
    graph = scenario.graph
    route = [graph.edge_index(e) for e in flow.edges]
    speed = _speeds(traj)

    def inside(k: int, node_id: int) -> bool:
        nd = graph.node(node_id)
        d = traj.xy[k] - nd.anchor
        return float(d @ d) <= nd.radius ** 2

    labels = np.empty(traj.n, dtype="U16")
    cur = 0
    entered = False  # has the agent been inside the current target disc
    for k in range(traj.n):
        moved = True
        while moved:
            moved = False
            e = route[cur]
            if graph.is_loop(e):
                node_m = graph.edge_nodes(e)[0]
                s = signal_state(scenario.schedule, float(traj.t[k]))
                walking = speed[k] >= STOP_SPEED and s >= 0.5
                if (walking or not inside(k, node_m)) and cur + 1 < len(route):
                    cur += 1
                    entered = inside(k, graph.edge_nodes(route[cur])[1])
                    moved = True
            else:
                to_node = graph.edge_nodes(e)[1]
                next_is_loop = cur + 1 < len(route) and graph.is_loop(route[cur + 1])
                if inside(k, to_node):
                    entered = True
                    if (next_is_loop and speed[k] < STOP_SPEED
                            and signal_state(scenario.schedule, float(traj.t[k])) < 0.5):
                        cur += 1  # start waiting
                        moved = True
                elif entered and cur + 1 < len(route):
                    cur += 2 if next_is_loop else 1
                    entered = inside(k, graph.edge_nodes(route[cur])[1])
                    moved = True
        labels[k] = flow.edges[cur]

    goal = graph.node(flow.goal_node)
    d = traj.xy[-1] - goal.anchor
    if float(d @ d) <= goal.radius ** 2 and cur != len(route) - 1:
        raise RouteMismatch(
            f"{traj.agent_id}: reached goal node {flow.goal_node} but only "
            f"{cur + 1} of {len(route)} route edges were walked")

    out = traj.copy()
    out.edges = labels
    out.flow_id = flow.flow_id
    out.goal_node = flow.goal_node
    return out


def resample(traj: Trajectory, frame_dt: float = 0.2) -> Trajectory:
    """Snap a trajectory onto the frame lattice.

    Each output record sits exactly at a multiple of frame_dt and takes
    the position (and label) of the nearest source record. The source
    must cover every lattice frame within half a frame; slower input
    raises RateTooLow. Input already on the lattice passes through.
    """
    if traj.n == 0:
        raise TrajectoryError(f"{traj.agent_id}: empty trajectory")
    half = frame_dt / 2.0 + 1e-9
    k_lo = int(np.ceil((traj.t[0] - half) / frame_dt))
    k_hi = int(np.floor((traj.t[-1] + half) / frame_dt))
    if k_hi < k_lo:
        raise RateTooLow(
            f"{traj.agent_id}: no lattice frame falls inside "
            f"[{traj.t[0]:.3f}, {traj.t[-1]:.3f}]")
    frames = np.arange(k_lo, k_hi + 1)
    times = frames * frame_dt
    right = np.searchsorted(traj.t, times)
    left = np.clip(right - 1, 0, traj.n - 1)
    right = np.clip(right, 0, traj.n - 1)
    pick = np.where(np.abs(traj.t[left] - times) <= np.abs(traj.t[right] - times),
                    left, right)
    resid = np.abs(traj.t[pick] - times)
    if resid.max() > half:
        k = int(np.argmax(resid > half))
        raise RateTooLow(
            f"{traj.agent_id}: nothing within half a frame of t={times[k]:.3f}, "
            f"source rate is below {1.0 / frame_dt:g} Hz there")
    if np.any(np.diff(pick) <= 0):
        raise RateTooLow(
            f"{traj.agent_id}: source slower than the target rate, one record "
            "would serve several frames")
    return Trajectory(
        agent_id=traj.agent_id,
        t=times,
        xy=traj.xy[pick].copy(),
        edges=None if traj.edges is None else traj.edges[pick].copy(),
        flow_id=traj.flow_id,
        goal_node=traj.goal_node,
        status=traj.status,
    )


def frame_keys(traj: Trajectory, frame_dt: float = 0.2) -> np.ndarray:
    """Integer lattice frame per record; raises if any record is off
    the lattice."""
    keys = np.rint(traj.t / frame_dt).astype(np.int64)
    off = np.abs(traj.t - keys * frame_dt)
    if off.max() > LATTICE_TOL:
        k = int(np.argmax(off))
        raise TrajectoryError(
            f"{traj.agent_id}: record at t={traj.t[k]:.6f} is off the "
            f"{frame_dt:g} s lattice; resample first")
    return keys


@dataclass
class SampleSet:
    """Stacked training samples with per-frame features stored once.

    frame_* arrays hold one row per (agent, frame) record; window_idx
    maps each sample's window steps to those rows, so overlapping
    windows share storage. batch() materializes the model input dict.
    """

    frame_rel: np.ndarray    # (F, 2 * n_nodes)
    frame_occ: np.ndarray    # (F, n_bins)
    frame_bird: np.ndarray   # (F, bird_pixels) float32
    frame_edge: np.ndarray   # (F,) int64 edge indices
    frame_sig: np.ndarray    # (F,)
    window_idx: np.ndarray   # (B, W) int64 rows into frame_*
    hist: np.ndarray         # (B, history_len) int64
    goal: np.ndarray         # (B,) int64 goal node rows
    target_dp: np.ndarray    # (B, 2)
    target_edge: np.ndarray  # (B,) int64
    agent_ids: np.ndarray    # (B,) unicode
    times: np.ndarray        # (B,)

    @property
    def n(self) -> int:
        return len(self.goal)

    def batch(self, idx) -> dict:
        w = self.window_idx[idx]
        return {
            "rel": self.frame_rel[w],
            "occ": self.frame_occ[w],
            "bird": self.frame_bird[w].astype(np.float64),
            "edge": self.frame_edge[w],
            "sig": self.frame_sig[w],
            "hist": self.hist[idx],
            "goal": self.goal[idx],
            "target_dp": self.target_dp[idx],
            "target_edge": self.target_edge[idx],
        }

    def subset(self, idx) -> "SampleSet":
        """Samples idx only; frame storage is shared, not copied."""
        idx = np.asarray(idx)
        return SampleSet(
            frame_rel=self.frame_rel, frame_occ=self.frame_occ,
            frame_bird=self.frame_bird, frame_edge=self.frame_edge,
            frame_sig=self.frame_sig,
            window_idx=self.window_idx[idx], hist=self.hist[idx],
            goal=self.goal[idx], target_dp=self.target_dp[idx],
            target_edge=self.target_edge[idx], agent_ids=self.agent_ids[idx],
            times=self.times[idx])

    def compact(self) -> "SampleSet":
        """Drop frame rows no sample references and remap the windows,
        undoing the storage sharing subset() leaves behind."""
        rows, inv = np.unique(self.window_idx, return_inverse=True)
        return SampleSet(
            frame_rel=self.frame_rel[rows], frame_occ=self.frame_occ[rows],
            frame_bird=self.frame_bird[rows], frame_edge=self.frame_edge[rows],
            frame_sig=self.frame_sig[rows],
            window_idx=inv.reshape(self.window_idx.shape).astype(np.int64),
            hist=self.hist, goal=self.goal, target_dp=self.target_dp,
            target_edge=self.target_edge, agent_ids=self.agent_ids,
            times=self.times)

    @classmethod
    def concat(cls, sets) -> "SampleSet":
        """Stack several sets (e.g. one per scene) into one."""
        sets = list(sets)
        if not sets:
            raise ValueError("nothing to concatenate")
        offsets = np.cumsum([0] + [len(s.frame_sig) for s in sets[:-1]])
        return cls(
            frame_rel=np.concatenate([s.frame_rel for s in sets]),
            frame_occ=np.concatenate([s.frame_occ for s in sets]),
            frame_bird=np.concatenate([s.frame_bird for s in sets]),
            frame_edge=np.concatenate([s.frame_edge for s in sets]),
            frame_sig=np.concatenate([s.frame_sig for s in sets]),
            window_idx=np.concatenate(
                [s.window_idx + off for s, off in zip(sets, offsets)]),
            hist=np.concatenate([s.hist for s in sets]),
            goal=np.concatenate([s.goal for s in sets]),
            target_dp=np.concatenate([s.target_dp for s in sets]),
            target_edge=np.concatenate([s.target_edge for s in sets]),
            agent_ids=np.concatenate([s.agent_ids for s in sets]),
            times=np.concatenate([s.times for s in sets]))


def extract_samples(trajectories, scenario: Scenario,
                    config: FeatureConfig = DEFAULT_FEATURES) -> SampleSet:
    """Build the sample set for one scene run.

    Expects labeled, lattice-aligned trajectories; every record with a
    successor becomes a sample. Occupancy is computed frame by frame
    over all agents present together, the other features in one batched
    pass per trajectory.
    """
    trajs = [tr for tr in trajectories if tr.n > 0]
    graph = scenario.graph
    for tr in trajs:
        if tr.edges is None or tr.goal_node is None:
            raise TrajectoryError(
                f"{tr.agent_id}: needs edge labels and a goal; annotate first")

    keys = [frame_keys(tr, config.frame_dt) for tr in trajs]
    offsets = np.cumsum([0] + [tr.n for tr in trajs])
    n_frames_total = int(offsets[-1]) if len(trajs) else 0

    frame_rel = np.empty((n_frames_total, 2 * graph.n_nodes))
    frame_occ = np.zeros((n_frames_total, config.n_bins))
    frame_bird = np.empty((n_frames_total, config.bird_size ** 2), dtype=np.float32)
    frame_edge = np.empty(n_frames_total, dtype=np.int64)
    frame_sig = np.empty(n_frames_total)

    headings = []
    for tr, base in zip(trajs, offsets):
        th = heading_angles(tr, graph)
        headings.append(th)
        frame_rel[base:base + tr.n] = (
            graph.anchors[None, :, :] - tr.xy[:, None, :]).reshape(tr.n, -1)
        frame_bird[base:base + tr.n] = bird_grids(tr.xy, th, scenario.raster, config)
        frame_sig[base:base + tr.n] = signal_state(scenario.schedule, tr.t)
        for k in range(tr.n):
            name = str(tr.edges[k])
            if not name:
                raise TrajectoryError(f"{tr.agent_id}: record {k} unlabeled")
            frame_edge[base + k] = graph.edge_index(name)

    # group records by frame for the all-pairs occupancy pass
    by_frame: dict = {}
    for i, (tr, kk) in enumerate(zip(trajs, keys)):
        for k, f in enumerate(kk):
            by_frame.setdefault(int(f), []).append((i, k))
    ring = np.asarray(config.ring_edges, dtype=np.float64)
    for members in by_frame.values():
        if len(members) < 2:
            continue
        pos = np.array([trajs[i].xy[k] for i, k in members])
        th = np.array([headings[i][k] for i, k in members])
        counts = kernels.occupancy_counts_all(pos, np.cos(th), np.sin(th),
                                              ring, config.n_sectors)
        for row, (i, k) in enumerate(members):
            frame_occ[offsets[i] + k] = counts[row]

    win, hist_len = config.window, config.history_len
    widx, hists, goals, dps, tedges, aids, times = [], [], [], [], [], [], []
    for i, (tr, base) in enumerate(zip(trajs, offsets)):
        if tr.n < 2:
            continue
        erows = frame_edge[base:base + tr.n]
        for k in range(tr.n - 1):
            first = max(0, k - win + 1)
            rows = list(range(base + first, base + k + 1))
            rows = [rows[0]] * (win - len(rows)) + rows
            widx.append(rows)
            hists.append(collapse_edge_history(erows[:k + 1], hist_len,
                                               pad_id=graph.n_edges))
            goals.append(graph.node_row(tr.goal_node))
            dps.append(tr.xy[k + 1] - tr.xy[k])
            tedges.append(erows[k + 1])
            aids.append(tr.agent_id)
            times.append(tr.t[k])

    nb = len(widx)
    return SampleSet(
        frame_rel=frame_rel, frame_occ=frame_occ, frame_bird=frame_bird,
        frame_edge=frame_edge, frame_sig=frame_sig,
        window_idx=np.asarray(widx, dtype=np.int64).reshape(nb, win),
        hist=np.asarray(hists, dtype=np.int64).reshape(nb, hist_len),
        goal=np.asarray(goals, dtype=np.int64),
        target_dp=np.asarray(dps, dtype=np.float64).reshape(nb, 2),
        target_edge=np.asarray(tedges, dtype=np.int64),
        agent_ids=np.asarray(aids, dtype="U32"),
        times=np.asarray(times, dtype=np.float64))


def from_samples(samples, config: FeatureConfig = DEFAULT_FEATURES) -> SampleSet:
    """Reference constructor from individually built Samples.

    Assumes lattice-spaced records (the normal pipeline), so padded
    window rows can be folded onto the earliest real frame.
    """
    table: dict = {}
    f_rel, f_occ, f_bird, f_edge, f_sig = [], [], [], [], []
    widx, hists, goals, dps, tedges, aids, times = [], [], [], [], [], [], []
    win = config.window
    for s in samples:
        k_t = int(round(s.t / config.frame_dt))
        w = s.window
        pad = int(win - w.valid.sum())
        first_key = k_t - (win - 1 - pad)
        rows = []
        for j in range(win):
            key = (s.agent_id, max(k_t - (win - 1 - j), first_key))
            if key not in table:
                table[key] = len(f_sig)
                f_rel.append(w.rel[j])
                f_occ.append(w.occ[j])
                f_bird.append(w.bird[j])
                f_edge.append(w.edge_idx[j])
                f_sig.append(w.signal[j])
            rows.append(table[key])
        widx.append(rows)
        hists.append(s.edge_history)
        goals.append(s.goal_row)
        dps.append(s.target_dp)
        tedges.append(s.target_edge)
        aids.append(s.agent_id or "")
        times.append(s.t)
    nb = len(widx)
    return SampleSet(
        frame_rel=np.asarray(f_rel, dtype=np.float64),
        frame_occ=np.asarray(f_occ, dtype=np.float64),
        frame_bird=np.asarray(f_bird, dtype=np.float32),
        frame_edge=np.asarray(f_edge, dtype=np.int64),
        frame_sig=np.asarray(f_sig, dtype=np.float64),
        window_idx=np.asarray(widx, dtype=np.int64).reshape(nb, win),
        hist=np.asarray(hists, dtype=np.int64).reshape(nb, config.history_len),
        goal=np.asarray(goals, dtype=np.int64),
        target_dp=np.asarray(dps, dtype=np.float64).reshape(nb, 2),
        target_edge=np.asarray(tedges, dtype=np.int64),
        agent_ids=np.asarray(aids, dtype="U32"),
        times=np.asarray(times, dtype=np.float64))


def transition_mask(sset: SampleSet) -> np.ndarray:
    """True where the target edge differs from the current one."""
    current = sset.frame_edge[sset.window_idx[:, -1]]
    return sset.target_edge != current


def _balanced_indices(positive, rng) -> np.ndarray:
    """Equal-size draw from both groups, order shuffled by rng."""
    positive = np.asarray(positive, dtype=bool)
    pos = np.flatnonzero(positive)
    neg = np.flatnonzero(~positive)
    if len(pos) == 0:
        raise NoTransitions("no edge-transition samples in the dataset")
    keep = min(len(pos), len(neg))
    if len(neg) > keep:
        neg = rng.choice(neg, size=keep, replace=False)
    elif len(pos) > keep:
        pos = rng.choice(pos, size=keep, replace=False)
    return rng.permutation(np.concatenate([pos, neg]))


def negative_downsample(sset: SampleSet, rng) -> SampleSet:
    """Balance edge-keeping samples against edge transitions. The larger
    group is cut down to the smaller one's size; survivors come back
    shuffled so batches see both labels from the start."""
    return sset.subset(_balanced_indices(transition_mask(sset), rng))


_SAVE_FIELDS = [f.name for f in fields(SampleSet)]


def save_dataset(sset: SampleSet, path, meta: dict | None = None) -> None:
    """Write a sample set as a compressed npz with a JSON meta record."""
    doc = {"schema_version": SCHEMA_VERSION, "n_samples": int(sset.n)}
    if meta:
        doc.update(meta)
    blob = np.frombuffer(json.dumps(doc, sort_keys=True).encode(), dtype=np.uint8)
    arrays = {name: getattr(sset, name) for name in _SAVE_FIELDS}
    with open(Path(path), "wb") as fh:
        np.savez_compressed(fh, __meta__=blob, **arrays)


def load_dataset(path):
    """Read back a saved sample set. Returns (SampleSet, meta dict)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    try:
        with np.load(path) as z:
            if "__meta__" not in z:
                raise DataError(f"{path}: not a pedflow dataset")
            meta = json.loads(bytes(z["__meta__"]).decode())
            arrays = {name: z[name] for name in _SAVE_FIELDS}
    except (zipfile.BadZipFile, ValueError, KeyError) as exc:
        raise DataError(f"{path}: unreadable dataset: {exc}") from exc
    if meta.get("schema_version") != SCHEMA_VERSION:
        raise DataError(f"{path}: schema_version {meta.get('schema_version')} "
                        f"is not {SCHEMA_VERSION}")
    return SampleSet(**arrays), meta
