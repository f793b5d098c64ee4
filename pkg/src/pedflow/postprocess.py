"""Stitching broken tracks and scoring crowd behavior.

Tracking drops people mid-scene (occlusion, bad lighting, umbrellas),
leaving several short fragments per person. connect_trajectories closes
those gaps by rolling a motion predictor forward from each fragment's
endpoint and splicing whenever the rollout lands on another fragment's
start point. The rest of the module measures the result: per-frame
occupancy and walking speed inside a region, series RMSE, and a
band-segregation index that puts a number on lane formation in
counterflow.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .dataset import from_samples
from .errors import EmptyRegion, LengthMismatch, TrajectoryError
from .features import DEFAULT_FEATURES, FeatureConfig, build_sample
from .net.model import forward
from .net.params import ModelParams
from .scenario import Scenario, polygon_contains
from .simulator import check_model
from .trajectory import Trajectory

logger = logging.getLogger(__name__)

FRAME_DT = DEFAULT_FEATURES.frame_dt
SLACK_AFTER_ROLL = 2.0   # seconds a start may trail the rollout window
RESCALE_LIMIT = 1.0      # max bridge/start clock disagreement absorbed by stretching


@dataclass(frozen=True)
class ConnectionConfig:
    """Knobs for the gap-closing pass. predictor is "cv" for the
    constant-velocity fallback or any callable (chain, n) -> (n, 2)
    future positions at one-frame spacing."""
    n_pred: int = 15
    delta: float = 0.5
    predictor: object = "cv"

    def __post_init__(self):
        if self.n_pred < 1:
            raise ValueError("n_pred must be at least 1")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.predictor != "cv" and not callable(self.predictor):
            raise ValueError("predictor must be 'cv' or a callable")


def constant_velocity(chain: Trajectory, n: int) -> np.ndarray:
    """Coast along the chain's last observed step for n frames."""
    if chain.n >= 2:
        v = (chain.xy[-1] - chain.xy[-2]) / (chain.t[-1] - chain.t[-2])
    else:
        v = np.zeros(2)
    k = np.arange(1, n + 1, dtype=np.float64)[:, None]
    return chain.xy[-1] + v * (k * FRAME_DT)


class ModelPredictor:
    """Rollout of a trained net from a fragment's endpoint.

    Context trajectories supply the neighbor positions the occupancy
    map sees at each rolled frame; fragments already absorbed into the
    chain are excluded by agent id. The chain must be edge-labeled.
    """

    def __init__(self, params: ModelParams, scenario: Scenario, context=(),
                 features: FeatureConfig = DEFAULT_FEATURES):
        check_model(params, scenario, features)
        self.params = params
        self.scenario = scenario
        self.features = features
        self._frames: dict = {}
        for tr in context:
            for j in range(tr.n):
                f = int(round(tr.t[j] / features.frame_dt))
                self._frames.setdefault(f, []).append((tr.agent_id, tr.xy[j]))

    def _neighbors(self, traj, skip):
        out = []
        for tt in traj.t:
            f = int(round(tt / self.features.frame_dt))
            pts = [p for aid, p in self._frames.get(f, ()) if aid not in skip]
            out.append(np.asarray(pts) if pts else np.zeros((0, 2)))
        return out

    def __call__(self, chain: Trajectory, n: int) -> np.ndarray:
        if chain.edges is None or chain.goal_node is None:
            raise TrajectoryError(
                f"{chain.agent_id}: model rollout needs edge labels and a goal")
        graph = self.scenario.graph
        route = list(self.scenario.flow(chain.flow_id).edges)
        skip = set(chain.agent_id.split("+"))
        dt = self.features.frame_dt
        work = chain.copy()
        out = np.empty((n, 2))
        for k in range(n):
            # dummy successor record so the sample builder has a target
            # slot; its values never enter the features
            ext = Trajectory(work.agent_id, np.append(work.t, work.t[-1] + dt),
                             np.vstack([work.xy, work.xy[-1]]),
                             edges=np.append(work.edges, work.edges[-1]),
                             flow_id=work.flow_id, goal_node=work.goal_node)
            sample = build_sample(ext, work.n - 1, graph,
                                  self.scenario.schedule, self.scenario.raster,
                                  self._neighbors(ext, skip), self.features)
            pred, _ = forward(self.params, from_samples([sample],
                                                        self.features).batch([0]),
                              need_cache=False)
            pos = work.xy[-1] + pred.delta_p[0]
            i_cur = route.index(str(work.edges[-1]))
            want = graph.edge_name(int(pred.edge_argmax[0]))
            if i_cur + 1 < len(route) and route[i_cur + 1] == want:
                name = want
            else:
                name = route[i_cur]
            work = Trajectory(work.agent_id, np.append(work.t, work.t[-1] + dt),
                              np.vstack([work.xy, pos]),
                              edges=np.append(work.edges, name),
                              flow_id=work.flow_id, goal_node=work.goal_node)
            out[k] = pos
        return out


def _find_splice(chain, trajs, used, flow_id, preds, delta, horizon):
    """First rolled step that lands within delta of an available start.

    Returns (index into trajs, steps used) or None. Candidates must
    start after the chain ends and no later than the horizon; on a
    contested step the nearest start wins, then the earliest.
    """
    t_end = chain.t[-1]
    cand = [j for j, tr in enumerate(trajs)
            if not used[j] and tr.flow_id == flow_id
            and t_end + 1e-9 < tr.t[0] <= t_end + horizon]
    if not cand:
        return None
    starts = np.array([trajs[j].xy[0] for j in cand])
    for k in range(len(preds)):
        d = np.linalg.norm(starts - preds[k], axis=1)
        hit = np.flatnonzero(d < delta)
        if hit.size:
            best = min(hit, key=lambda h: (d[h], trajs[cand[h]].t[0], cand[h]))
            return cand[best], k + 1
    return None


def _bridge(t_end, t_start, preds, k):
    """Timestamps and points filling (t_end, t_start) with the first k
    rolled steps. When the nominal arrival clock roughly agrees with the
    fragment start, the bridge is stretched to meet it exactly and the
    last rolled point yields to the fragment's own first record;
    otherwise stamps stay at frame spacing, truncated before t_start."""
    arrival = t_end + k * FRAME_DT
    if abs(t_start - arrival) < RESCALE_LIMIT:
        ts = t_end + (t_start - t_end) * np.arange(1, k) / k
        return ts, preds[:k - 1]
    ts = t_end + FRAME_DT * np.arange(1, k + 1)
    keep = ts < t_start - 1e-9
    return ts[keep], preds[:k][keep]


def _splice(chain, ts, pts, nxt):
    t = np.concatenate([chain.t, ts, nxt.t])
    xy = np.concatenate([chain.xy, pts, nxt.xy])
    edges = None
    if chain.edges is not None and nxt.edges is not None:
        fill = np.full(len(ts), str(chain.edges[-1]))
        edges = np.concatenate([chain.edges, fill, nxt.edges])
    goal = chain.goal_node if chain.goal_node is not None else nxt.goal_node
    return Trajectory(chain.agent_id + "+" + nxt.agent_id, t, xy, edges=edges,
                      flow_id=chain.flow_id, goal_node=goal, status=nxt.status)


def connect_trajectories(trajs, cfg: ConnectionConfig, flow) -> list:
    """Close tracking gaps in one flow by predictive splicing.

    Fragments are taken in input (time) order. For each, the predictor
    rolls forward up to cfg.n_pred frames from the chain's endpoint; as
    soon as a rolled point lands within cfg.delta of another fragment's
    start, the gap is bridged, that fragment joins the chain, the step
    counter resets, and rolling resumes from the new endpoint. Each
    fragment can be absorbed at most once. Fragments of other flows,
    and anything never matched, pass through untouched.
    """
    predict = cfg.predictor if callable(cfg.predictor) else constant_velocity
    horizon = cfg.n_pred * FRAME_DT + SLACK_AFTER_ROLL
    used = [False] * len(trajs)
    out = []
    for i, tr in enumerate(trajs):
        if used[i]:
            continue
        if tr.flow_id != flow.flow_id:
            out.append(tr)
            continue
        used[i] = True
        chain = tr
        while True:
            found = _find_splice(chain, trajs, used, flow.flow_id,
                                 predict(chain, cfg.n_pred), cfg.delta, horizon)
            if found is None:
                break
            j, steps = found
            used[j] = True
            nxt = trajs[j]
            ts, pts = _bridge(chain.t[-1], nxt.t[0],
                              predict(chain, steps), steps)
            logger.info("connected %s -> %s across %.1f s (%d bridge points)",
                        chain.agent_id, nxt.agent_id,
                        nxt.t[0] - chain.t[-1], len(ts))
            chain = _splice(chain, ts, pts, nxt)
        out.append(chain)
    return out


@dataclass
class CrowdSeries:
    """Per-frame occupancy of a region. mean_speed is NaN on frames
    where nobody is inside."""
    t: np.ndarray
    count: np.ndarray
    mean_speed: np.ndarray

    @property
    def n(self) -> int:
        return len(self.t)


def _region(polygon) -> np.ndarray:
    poly = np.asarray(polygon, dtype=np.float64)
    if poly.ndim != 2 or poly.shape[0] < 3 or poly.shape[1] != 2:
        raise EmptyRegion("region needs at least three [x, y] vertices")
    if not np.all(np.isfinite(poly)):
        raise EmptyRegion("region has non-finite vertices")
    x, y = poly[:, 0], poly[:, 1]
    area = 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))
    if area < 1e-9:
        raise EmptyRegion("region polygon encloses no area")
    return poly


def _frame_lattice(trajs, frame_rate, t_range):
    dt = 1.0 / frame_rate
    if t_range is None:
        if not trajs:
            return np.zeros(0), dt
        t0 = min(tr.t[0] for tr in trajs)
        t1 = max(tr.t[-1] for tr in trajs)
    else:
        t0, t1 = t_range
    k0 = int(np.ceil(t0 / dt - 1e-9))
    k1 = int(np.floor(t1 / dt + 1e-9))
    if k1 < k0:
        return np.zeros(0), dt
    return np.arange(k0, k1 + 1) * dt, dt


def _nearest_records(tr, times, dt):
    """Record index closest to each frame time, plus a mask of frames
    that actually have one within half a frame."""
    j = np.searchsorted(tr.t, times)
    lo = np.clip(j - 1, 0, tr.n - 1)
    hi = np.clip(j, 0, tr.n - 1)
    pick = np.where(np.abs(tr.t[hi] - times) < np.abs(tr.t[lo] - times), hi, lo)
    ok = np.abs(tr.t[pick] - times) <= 0.5 * dt + 1e-9
    return pick, ok


def _record_speeds(tr) -> np.ndarray:
    """Finite-difference speed at each record, central in the interior."""
    if tr.n < 2:
        return np.zeros(tr.n)
    v = np.empty(tr.n)
    v[0] = np.linalg.norm(tr.xy[1] - tr.xy[0]) / (tr.t[1] - tr.t[0])
    v[-1] = np.linalg.norm(tr.xy[-1] - tr.xy[-2]) / (tr.t[-1] - tr.t[-2])
    if tr.n > 2:
        v[1:-1] = (np.linalg.norm(tr.xy[2:] - tr.xy[:-2], axis=1)
                   / (tr.t[2:] - tr.t[:-2]))
    return v


def crowd_metrics(trajs, region, frame_rate: float = 5.0,
                  t_range=None) -> CrowdSeries:
    """Count agents inside region per frame and average their speed.

    Positions come from each trajectory's record nearest to the frame
    time (within half a frame); speeds are central differences on its
    own records, one-sided at the ends. The frame lattice spans the
    data unless t_range forces a window.
    """
    poly = _region(region)
    times, dt = _frame_lattice(trajs, frame_rate, t_range)
    count = np.zeros(len(times), dtype=np.int64)
    speed_sum = np.zeros(len(times))
    if len(times):
        for tr in trajs:
            if tr.n == 0:
                continue
            pick, ok = _nearest_records(tr, times, dt)
            inside = ok & polygon_contains(poly, tr.xy[pick])
            count += inside
            speed_sum[inside] += _record_speeds(tr)[pick][inside]
    mean = np.where(count > 0, speed_sum / np.maximum(count, 1), np.nan)
    return CrowdSeries(t=times, count=count, mean_speed=mean)


def rmse(series_a, series_b) -> float:
    """Root mean square difference between two equal-length series.

    Pairs where either side is absent (NaN) are dropped; how many were
    is logged. Raises if nothing remains.
    """
    a = np.atleast_1d(np.asarray(series_a, dtype=np.float64))
    b = np.atleast_1d(np.asarray(series_b, dtype=np.float64))
    if len(a) == 0 or len(b) == 0:
        raise LengthMismatch("empty series")
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise LengthMismatch(f"series shapes {a.shape} vs {b.shape}")
    ok = np.isfinite(a) & np.isfinite(b)
    dropped = int(len(a) - ok.sum())
    if dropped:
        logger.info("rmse: dropped %d of %d pairs with absent values",
                    dropped, len(a))
    if not np.any(ok):
        raise ValueError("every pair has an absent value")
    return float(np.sqrt(np.mean((a[ok] - b[ok]) ** 2)))


def lane_index(trajs_a, trajs_b, region, n_strips: int = 8,
               frame_rate: float = 5.0, t_range=None) -> float:
    """Band-segregation score for two opposing flows inside a region.

    The region's short (lateral) axis is cut into n_strips bands. Each
    frame scores the occupancy-weighted mean of |n_a - n_b| / (n_a +
    n_b) over occupied bands, which collapses to sum |n_a - n_b| over
    the total head count. 1 means clean lanes, 0 fully mixed. Frames
    missing either flow are skipped; if every frame is, that is an
    EmptyRegion.
    """
    poly = _region(region)
    center = poly.mean(axis=0)
    spread = poly - center
    _, vecs = np.linalg.eigh(spread.T @ spread)
    lat = vecs[:, 0]    # eigenvalues ascend, so column 0 is the short axis
    proj = spread @ lat
    lo, hi = float(proj.min()), float(proj.max())
    if hi - lo < 1e-9:
        raise EmptyRegion("region has no lateral extent")
    bands = np.linspace(lo, hi, n_strips + 1)
    times, dt = _frame_lattice(list(trajs_a) + list(trajs_b), frame_rate,
                               t_range)
    hists = []
    for trajs in (trajs_a, trajs_b):
        hist = np.zeros((len(times), n_strips), dtype=np.int64)
        if len(times):
            for tr in trajs:
                if tr.n == 0:
                    continue
                pick, ok = _nearest_records(tr, times, dt)
                inside = ok & polygon_contains(poly, tr.xy[pick])
                s = (tr.xy[pick] - center) @ lat
                strip = np.clip(np.digitize(s, bands) - 1, 0, n_strips - 1)
                np.add.at(hist, (np.flatnonzero(inside), strip[inside]), 1)
        hists.append(hist)
    na, nb = hists
    tot_a, tot_b = na.sum(axis=1), nb.sum(axis=1)
    both = (tot_a > 0) & (tot_b > 0)
    if not np.any(both):
        raise EmptyRegion("no frame has both flows inside the region")
    diff = np.abs(na - nb).sum(axis=1)
    return float(np.mean(diff[both] / (tot_a[both] + tot_b[both])))
