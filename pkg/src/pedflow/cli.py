"""Command line front end wiring the pipeline together.

Eight subcommands cover the full path from raw correspondences to
metric plots: calibrate, gen-data, prepare, train, simulate,
interpolate, evaluate, plot. Every run that writes files records a
manifest first (inputs, resolved options, seed, versions), so any
artifact can be traced to the run that made it. Options can come from
a TOML config file; flags always win. Exit codes: 0 ok, 1 usage,
2 bad data, 3 internal.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import traceback
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from . import CHECKPOINT_VERSION, SCHEMA_VERSION, __version__
from .dataset import (annotate_edges, extract_samples, negative_downsample,
                      load_dataset, resample, save_dataset)
from .errors import DataError, ParseError, PedflowError, UsageError
from .features import DEFAULT_FEATURES
from .geometry import Correspondence, calibrate_dlt, reprojection_errors
from .net.params import ModelConfig, ModelParams
from .net.training import TrainConfig
from .net.training import evaluate as evaluate_model
from .net.training import train as train_model
from .oracle import generate_synthetic
from .plotting import Series, plot_series
from .postprocess import (ConnectionConfig, ModelPredictor,
                          connect_trajectories, crowd_metrics, rmse)
from .scenario import load_scenario
from .simulator import run, run_replacement
from .trajectory import read_trajectories, resolve_flows, write_trajectories

VERSION_LINE = (f"pedflow {__version__} (scenario schema {SCHEMA_VERSION}, "
                f"checkpoint format {CHECKPOINT_VERSION})")

_REQUIRED = object()


@dataclass
class RunManifest:
    """Reproducibility record, written before any output artifact."""

    subcommand: str
    config: dict
    inputs: list
    outputs: list
    seed: int | None = None
    scenario_hash: str | None = None
    versions: dict = field(default_factory=lambda: {
        "tool": __version__,
        "scenario_schema": SCHEMA_VERSION,
        "checkpoint_format": CHECKPOINT_VERSION,
    })

    def write(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def _hash_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _sidecar(out) -> Path:
    """Manifest path for a single-file output."""
    return Path(str(out) + ".manifest.json")


def _prep_out(path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _load_section(args) -> dict:
    """This subcommand's table from the run config file, if one was given."""
    if args.config is None:
        return {}
    path = Path(args.config)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"{path}: {exc}") from exc
    section = doc.get(args.cmd, {})
    if not isinstance(section, dict):
        raise UsageError(f"{path}: [{args.cmd}] must be a table")
    return section


def _opt(args, section: dict, name: str, default=_REQUIRED):
    """Resolve one option: flag beats config file beats default."""
    value = getattr(args, name)
    if value is None:
        value = section.get(name)
    if value is None:
        if default is _REQUIRED:
            raise UsageError(
                f"missing required option --{name.replace('_', '-')}")
        return default
    return value


# ---------------------------------------------------------------- calibrate

def _read_points(path) -> list:
    path = Path(path)
    if not path.exists():
        raise ParseError(f"points file not found: {path}")
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ParseError(f"{path}: empty file")
    header = [c.strip().lower() for c in rows[0]]
    if header[:5] != ["u", "v", "x", "y", "z"]:
        raise ParseError(f"{path}: header must be u,v,X,Y,Z")
    points = []
    for k, row in enumerate(rows[1:], start=2):
        try:
            u, v, x, y, z = (float(c) for c in row[:5])
        except ValueError as exc:
            raise ParseError(f"{path}: line {k}: need five numbers") from exc
        points.append(Correspondence(world=(x, y, z), pixel=(u, v)))
    if not points:
        raise ParseError(f"{path}: no data rows")
    return points


def _cmd_calibrate(args) -> None:
    section = _load_section(args)
    points_path = _opt(args, section, "points")
    out = _opt(args, section, "out", None)

    points = _read_points(points_path)
    matrix = calibrate_dlt(points)
    errors = reprojection_errors(matrix, points)
    line = ",".join(repr(float(v)) for v in matrix.m.reshape(-1))

    if out is not None:
        RunManifest("calibrate",
                    {"points": str(points_path), "out": str(out)},
                    inputs=[str(points_path)],
                    outputs=[str(out)]).write(_sidecar(out))
        _prep_out(out).write_text(line + "\n")
    else:
        print(line)
    print(f"{len(points)} points, residuals [px]: max {errors.max():.3e}, "
          f"mean {errors.mean():.3e}, "
          f"rms {float(np.sqrt(np.mean(errors ** 2))):.3e}")


# ----------------------------------------------------------------- gen-data

def _cmd_gen_data(args) -> None:
    section = _load_section(args)
    scen_path = _opt(args, section, "scenario")
    out_dir = Path(_opt(args, section, "out"))
    seed = int(_opt(args, section, "seed", 0))
    agents = _opt(args, section, "agents", None)
    duration = _opt(args, section, "duration", None)
    if agents is not None and duration is not None:
        raise UsageError("--agents and --duration are mutually exclusive")

    scenario = load_scenario(scen_path)
    out_csv = out_dir / "trajectories.csv"
    out_dir.mkdir(parents=True, exist_ok=True)
    RunManifest("gen-data",
                {"scenario": str(scen_path), "out": str(out_dir), "seed": seed,
                 "agents": None if agents is None else int(agents),
                 "duration": None if duration is None else float(duration)},
                inputs=[str(scen_path)], outputs=[str(out_csv)], seed=seed,
                scenario_hash=_hash_file(scen_path)).write(out_dir / "manifest.json")

    if agents is not None:
        trajs = generate_synthetic(scenario, seed=seed, n_agents=int(agents))
    else:
        trajs = generate_synthetic(
            scenario, duration=280.0 if duration is None else float(duration),
            seed=seed)
    write_trajectories(out_csv, trajs)
    print(f"wrote {len(trajs)} trajectories to {out_csv}", file=sys.stderr)


# ------------------------------------------------------------------ prepare

def _cmd_prepare(args) -> None:
    section = _load_section(args)
    scen_path = _opt(args, section, "scenario")
    traj_path = _opt(args, section, "trajectories")
    out = _opt(args, section, "out")
    seed = int(_opt(args, section, "seed", 0))

    scenario = load_scenario(scen_path)
    trajs = read_trajectories(traj_path)
    resolve_flows(trajs, scenario)
    members = [tr for tr in trajs if tr.flow_id is not None]
    if not members:
        raise DataError(f"no trajectory in {traj_path} matches a flow "
                        f"of {scen_path}")
    prepared = [resample(annotate_edges(tr, scenario),
                         DEFAULT_FEATURES.frame_dt) for tr in members]
    sset = extract_samples(prepared, scenario)
    balanced = negative_downsample(sset, np.random.default_rng(seed)).compact()

    RunManifest("prepare",
                {"scenario": str(scen_path), "trajectories": str(traj_path),
                 "out": str(out), "seed": seed},
                inputs=[str(scen_path), str(traj_path)], outputs=[str(out)],
                seed=seed, scenario_hash=_hash_file(scen_path)).write(_sidecar(out))
    save_dataset(balanced, _prep_out(out),
                 meta={"seed": seed, "n_raw": int(sset.n),
                       "scenario_hash": _hash_file(scen_path)})
    print(f"{balanced.n} balanced samples (of {sset.n} raw) -> {out}",
          file=sys.stderr)


# -------------------------------------------------------------------- train

def _cmd_train(args) -> None:
    section = _load_section(args)
    ds_path = _opt(args, section, "dataset")
    scen_path = _opt(args, section, "scenario")
    out = _opt(args, section, "out")
    seed = int(_opt(args, section, "seed", 0))
    epochs = int(_opt(args, section, "epochs", TrainConfig.epochs))
    batch = int(_opt(args, section, "batch_size", TrainConfig.batch_size))
    lr = float(_opt(args, section, "lr", TrainConfig.lr))

    sset, _meta = load_dataset(ds_path)
    scenario = load_scenario(scen_path)
    mcfg = ModelConfig.from_scenario(scenario)
    tcfg = TrainConfig(epochs=epochs, batch_size=batch, lr=lr, seed=seed)
    losses_path = Path(str(out) + ".losses.csv")

    RunManifest("train",
                {"dataset": str(ds_path), "scenario": str(scen_path),
                 "out": str(out), "seed": seed, "epochs": epochs,
                 "batch_size": batch, "lr": lr},
                inputs=[str(ds_path), str(scen_path)],
                outputs=[str(out), str(losses_path)], seed=seed,
                scenario_hash=_hash_file(scen_path)).write(_sidecar(out))

    def progress(epoch, train_loss, val_loss, lr_now):
        print(f"epoch {epoch:3d}: train {train_loss:.6f} "
              f"val {val_loss:.6f} lr {lr_now:.2e}", file=sys.stderr)

    result = train_model(sset, mcfg, tcfg, callback=progress)
    result.params.save(_prep_out(out))
    with open(losses_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for k, row in enumerate(zip(result.train_loss, result.val_loss,
                                    result.lr_history)):
            w.writerow([k] + [repr(float(v)) for v in row])

    metrics = evaluate_model(result.params, sset, idx=result.val_indices)
    print(f"best epoch {result.best_epoch}: val loss {result.best_val:.6f}, "
          f"held-out position error {metrics['mean_pos_err']:.4f} m, "
          f"edge accuracy {100.0 * metrics['edge_acc']:.2f}%", file=sys.stderr)


# ----------------------------------------------------------------- simulate

def _cmd_simulate(args) -> None:
    section = _load_section(args)
    scen_path = _opt(args, section, "scenario")
    ckpt = _opt(args, section, "checkpoint")
    out = _opt(args, section, "out")
    seed = int(_opt(args, section, "seed", 0))
    duration = float(_opt(args, section, "duration", 280.0))
    timeout = float(_opt(args, section, "timeout", 300.0))
    ref_path = _opt(args, section, "replace_ref", None)
    ids_raw = _opt(args, section, "replace_ids", None)
    dump_path = _opt(args, section, "state_dump", None)
    if (ref_path is None) != (ids_raw is None):
        raise UsageError("--replace-ref and --replace-ids go together")
    if isinstance(ids_raw, str):
        replace_ids = [s.strip() for s in ids_raw.split(",") if s.strip()]
    else:
        replace_ids = None if ids_raw is None else [str(s) for s in ids_raw]

    scenario = load_scenario(scen_path)
    params = ModelParams.load(ckpt)
    inputs = [str(scen_path), str(ckpt)]
    if ref_path is not None:
        inputs.append(str(ref_path))
    outputs = [str(out)] + ([str(dump_path)] if dump_path is not None else [])
    RunManifest("simulate",
                {"scenario": str(scen_path), "checkpoint": str(ckpt),
                 "out": str(out), "seed": seed, "duration": duration,
                 "timeout": timeout,
                 "replace_ref": None if ref_path is None else str(ref_path),
                 "replace_ids": replace_ids,
                 "state_dump": None if dump_path is None else str(dump_path)},
                inputs, outputs, seed=seed,
                scenario_hash=_hash_file(scen_path)).write(_sidecar(out))

    dump_fh = None
    on_step = None
    try:
        if dump_path is not None:
            dump_fh = open(_prep_out(dump_path), "w")
            dt = DEFAULT_FEATURES.frame_dt

            def on_step(state):
                rec = {"frame": int(state.frame),
                       "t": round(state.frame * dt, 6),
                       "agents": [{"id": ag.aid,
                                   "x": round(float(ag.ps[-1][0]), 6),
                                   "y": round(float(ag.ps[-1][1]), 6)}
                                  for ag in state.active if ag.ps]}
                dump_fh.write(json.dumps(rec, sort_keys=True) + "\n")

        if ref_path is not None:
            reference = read_trajectories(ref_path)
            resolve_flows(reference, scenario)
            trajs = run_replacement(scenario, params, reference, replace_ids,
                                    seed=seed, timeout=timeout, on_step=on_step)
        else:
            trajs = run(scenario, params, duration, seed, timeout=timeout,
                        on_step=on_step)
    finally:
        if dump_fh is not None:
            dump_fh.close()

    write_trajectories(_prep_out(out), trajs)
    arrived = sum(1 for tr in trajs if tr.status == "arrived")
    print(f"{len(trajs)} agents ({arrived} arrived) -> {out}", file=sys.stderr)


# -------------------------------------------------------------- interpolate

def _cmd_interpolate(args) -> None:
    section = _load_section(args)
    scen_path = _opt(args, section, "scenario")
    traj_path = _opt(args, section, "trajectories")
    out = _opt(args, section, "out")
    flow_opt = _opt(args, section, "flow", None)
    n_pred = int(_opt(args, section, "n_pred", ConnectionConfig.n_pred))
    delta = float(_opt(args, section, "delta", ConnectionConfig.delta))
    ckpt = _opt(args, section, "checkpoint", None)

    scenario = load_scenario(scen_path)
    trajs = read_trajectories(traj_path)
    resolve_flows(trajs, scenario)
    trajs.sort(key=lambda tr: (tr.t[0], tr.agent_id))
    flow_ids = [flow_opt] if flow_opt is not None else list(scenario.flow_ids)

    RunManifest("interpolate",
                {"scenario": str(scen_path), "trajectories": str(traj_path),
                 "out": str(out), "flow": flow_opt, "n_pred": n_pred,
                 "delta": delta,
                 "checkpoint": None if ckpt is None else str(ckpt)},
                inputs=[str(scen_path), str(traj_path)]
                + ([str(ckpt)] if ckpt is not None else []),
                outputs=[str(out)],
                scenario_hash=_hash_file(scen_path)).write(_sidecar(out))

    predictor = "cv"
    if ckpt is not None:
        params = ModelParams.load(ckpt)
        # model rollouts need labeled fragments; fill in what's missing
        trajs = [annotate_edges(tr, scenario)
                 if tr.flow_id is not None and tr.edges is None else tr
                 for tr in trajs]
        predictor = ModelPredictor(params, scenario, context=trajs)
    cfg = ConnectionConfig(n_pred=n_pred, delta=delta, predictor=predictor)

    result = trajs
    for fid in flow_ids:
        result = connect_trajectories(result, cfg, scenario.flow(fid))
    write_trajectories(_prep_out(out), result)
    print(f"{len(trajs)} fragments -> {len(result)} trajectories "
          f"({len(trajs) - len(result)} connections)", file=sys.stderr)


# ----------------------------------------------------------- evaluate, plot

def _series_table(scenario, actual, simulated):
    """Per-flow count and speed series for both sets on one lattice."""
    spans = [tr.t for tr in list(actual) + list(simulated) if tr.n]
    if not spans:
        raise DataError("no records in either trajectory set")
    window = (min(float(t[0]) for t in spans),
              max(float(t[-1]) for t in spans))
    region = scenario.crosswalk
    t_axis = None
    cols: dict = {}
    for fid in scenario.flow_ids:
        both = {}
        for tag, trajs in (("actual", actual), ("sim", simulated)):
            sub = [tr for tr in trajs if tr.flow_id == fid]
            series = crowd_metrics(sub, region, t_range=window)
            t_axis = series.t
            both[tag] = series
        for kind in ("count", "speed"):
            for tag in ("actual", "sim"):
                y = getattr(both[tag], "count" if kind == "count"
                            else "mean_speed")
                cols[f"{fid}_{kind}_{tag}"] = np.asarray(y, dtype=float)
    return t_axis, cols


def _split_kinds(cols: dict) -> dict:
    """Group series columns by measured quantity; names must follow the
    <flow>_<count|speed>_<actual|sim> pattern evaluate writes."""
    kinds: dict = {"count": [], "speed": []}
    for name, y in cols.items():
        parts = name.rsplit("_", 2)
        if len(parts) != 3 or parts[1] not in kinds \
                or parts[2] not in ("actual", "sim"):
            raise ParseError(f"column {name!r}: expected "
                             "<flow>_<count|speed>_<actual|sim>")
        kinds[parts[1]].append((parts[0], parts[2], y))
    return kinds


_PLOT_SPECS = {"count": ("pedestrians in region", "Region count"),
               "speed": ("mean speed [m/s]", "Region mean speed")}


def _render_plots(out_dir, t, kinds: dict, schedule) -> list:
    made = []
    for kind in ("count", "speed"):
        if not kinds[kind]:
            continue
        series = [Series(label=f"{fid} {tag}", t=t,
                         y=np.asarray(y, dtype=float), dashed=tag == "sim")
                  for fid, tag, y in kinds[kind]]
        ylabel, title = _PLOT_SPECS[kind]
        path = Path(out_dir) / f"{kind}.svg"
        plot_series(path, series, ylabel=ylabel, title=title,
                    schedule=schedule)
        made.append(str(path))
    return made


def _write_series_csv(path, t, cols: dict) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + list(cols))
        for k in range(len(t)):
            row = [f"{t[k]:.6f}"]
            for y in cols.values():
                v = y[k]
                row.append("" if not np.isfinite(v) else repr(float(v)))
            w.writerow(row)


def _cmd_evaluate(args) -> None:
    section = _load_section(args)
    scen_path = _opt(args, section, "scenario")
    act_path = _opt(args, section, "actual")
    sim_path = _opt(args, section, "simulated")
    out_dir = Path(_opt(args, section, "out_dir"))
    plots = bool(_opt(args, section, "plots", False))

    scenario = load_scenario(scen_path)
    actual = read_trajectories(act_path)
    simulated = read_trajectories(sim_path)
    resolve_flows(actual, scenario)
    resolve_flows(simulated, scenario)
    t_axis, cols = _series_table(scenario, actual, simulated)

    series_path = out_dir / "series.csv"
    summary_path = out_dir / "summary.json"
    outputs = [str(series_path), str(summary_path)]
    if plots:
        outputs += [str(out_dir / "count.svg"), str(out_dir / "speed.svg")]
    out_dir.mkdir(parents=True, exist_ok=True)
    RunManifest("evaluate",
                {"scenario": str(scen_path), "actual": str(act_path),
                 "simulated": str(sim_path), "out_dir": str(out_dir),
                 "plots": plots},
                inputs=[str(scen_path), str(act_path), str(sim_path)],
                outputs=outputs,
                scenario_hash=_hash_file(scen_path)).write(out_dir / "manifest.json")

    summary: dict = {"flows": {}}
    for fid in scenario.flow_ids:
        try:
            speed = rmse(cols[f"{fid}_speed_actual"],
                         cols[f"{fid}_speed_sim"])
        except ValueError:
            # a flow absent from the region leaves no finite speed pairs
            print(f"pedflow: {fid}: no overlapping speed samples, "
                  "rmse omitted", file=sys.stderr)
            speed = None
        summary["flows"][fid] = {
            "count_rmse": rmse(cols[f"{fid}_count_actual"],
                               cols[f"{fid}_count_sim"]),
            "speed_rmse": speed,
        }
    _write_series_csv(series_path, t_axis, cols)
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if plots:
        _render_plots(out_dir, t_axis, _split_kinds(cols), scenario.schedule)
    for fid, vals in summary["flows"].items():
        speed_txt = ("n/a" if vals["speed_rmse"] is None
                     else f"{vals['speed_rmse']:.3f} m/s")
        print(f"{fid}: count rmse {vals['count_rmse']:.3f}, "
              f"speed rmse {speed_txt}", file=sys.stderr)


def _read_series(path):
    path = Path(path)
    if not path.exists():
        raise ParseError(f"series file not found: {path}")
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ParseError(f"{path}: empty file")
    header = rows[0]
    if not header or header[0] != "t" or len(header) < 2:
        raise ParseError(f"{path}: header must be t followed by series columns")
    body = rows[1:]
    if not body:
        raise ParseError(f"{path}: no data rows")
    try:
        t = np.array([float(r[0]) for r in body])
        cols = {name: np.array([float(r[j]) if r[j] != "" else np.nan
                                for r in body])
                for j, name in enumerate(header[1:], start=1)}
    except (ValueError, IndexError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return t, cols


def _cmd_plot(args) -> None:
    section = _load_section(args)
    series_path = _opt(args, section, "series")
    scen_path = _opt(args, section, "scenario")
    out_dir = Path(_opt(args, section, "out_dir"))

    scenario = load_scenario(scen_path)
    t, cols = _read_series(series_path)
    kinds = _split_kinds(cols)
    outputs = [str(out_dir / f"{k}.svg")
               for k in ("count", "speed") if kinds[k]]
    out_dir.mkdir(parents=True, exist_ok=True)
    RunManifest("plot",
                {"series": str(series_path), "scenario": str(scen_path),
                 "out_dir": str(out_dir)},
                inputs=[str(series_path), str(scen_path)], outputs=outputs,
                scenario_hash=_hash_file(scen_path)).write(out_dir / "manifest.json")
    made = _render_plots(out_dir, t, kinds, scenario.schedule)
    print(f"wrote {', '.join(made)}", file=sys.stderr)


# ----------------------------------------------------------------- dispatch

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pedflow",
        description="pedestrian flow pipeline: calibrate a camera, generate "
                    "and prepare data, train the predictor, simulate, "
                    "interpolate gaps, evaluate and plot")
    parser.add_argument("--version", action="version", version=VERSION_LINE)
    sub = parser.add_subparsers(dest="cmd", metavar="subcommand")

    def command(name, summary, handler):
        p = sub.add_parser(name, help=summary, description=summary)
        p.add_argument("--config", metavar="TOML",
                       help="run config file; flags override its values")
        p.set_defaults(handler=handler)
        return p

    p = command("calibrate", "fit a projection matrix from point "
                "correspondences", _cmd_calibrate)
    p.add_argument("--points", help="CSV of u,v,X,Y,Z rows (header required)")
    p.add_argument("--out", help="matrix destination (12 values, row major); "
                   "stdout when omitted")

    p = command("gen-data", "synthesize oracle trajectories for a scenario",
                _cmd_gen_data)
    p.add_argument("--scenario", help="scenario TOML")
    p.add_argument("--out", help="output directory")
    p.add_argument("--agents", type=int, help="stop after this many spawns")
    p.add_argument("--duration", type=float,
                   help="spawn window in seconds (default 280)")
    p.add_argument("--seed", type=int, help="random seed (default 0)")

    p = command("prepare", "turn trajectories into a balanced training set",
                _cmd_prepare)
    p.add_argument("--scenario", help="scenario TOML")
    p.add_argument("--trajectories", help="trajectory CSV")
    p.add_argument("--out", help="dataset destination (npz)")
    p.add_argument("--seed", type=int,
                   help="seed for the balancing draw (default 0)")

    p = command("train", "fit the predictor on a prepared dataset", _cmd_train)
    p.add_argument("--dataset", help="prepared dataset (npz)")
    p.add_argument("--scenario", help="scenario TOML")
    p.add_argument("--out", help="checkpoint destination")
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--epochs", type=int,
                   help=f"training epochs (default {TrainConfig.epochs})")
    p.add_argument("--batch-size", type=int,
                   help=f"minibatch size (default {TrainConfig.batch_size})")
    p.add_argument("--lr", type=float,
                   help=f"initial learning rate (default {TrainConfig.lr})")

    p = command("simulate", "run the closed-loop crowd simulation",
                _cmd_simulate)
    p.add_argument("--scenario", help="scenario TOML")
    p.add_argument("--checkpoint", help="trained model checkpoint")
    p.add_argument("--out", help="trajectory CSV destination")
    p.add_argument("--duration", type=float,
                   help="spawn window in seconds (default 280)")
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--timeout", type=float,
                   help="per-agent walk budget in seconds (default 300)")
    p.add_argument("--replace-ref", metavar="CSV",
                   help="replacement mode: reference trajectories to replay")
    p.add_argument("--replace-ids", metavar="ID,ID,...",
                   help="replacement mode: agents to re-simulate")
    p.add_argument("--state-dump", metavar="JSONL",
                   help="write per-step state as JSON lines (debugging)")

    p = command("interpolate", "close tracking gaps by predictive splicing",
                _cmd_interpolate)
    p.add_argument("--scenario", help="scenario TOML")
    p.add_argument("--trajectories", help="fragment CSV")
    p.add_argument("--out", help="connected trajectory CSV destination")
    p.add_argument("--flow", help="connect only this flow (default: all)")
    p.add_argument("--n-pred", type=int,
                   help="rollout horizon in frames "
                        f"(default {ConnectionConfig.n_pred})")
    p.add_argument("--delta", type=float,
                   help="match radius in meters "
                        f"(default {ConnectionConfig.delta})")
    p.add_argument("--checkpoint",
                   help="model checkpoint to roll out; constant velocity "
                        "when omitted")

    p = command("evaluate", "compare crowd series of two trajectory sets",
                _cmd_evaluate)
    p.add_argument("--scenario", help="scenario TOML")
    p.add_argument("--actual", help="reference trajectory CSV")
    p.add_argument("--simulated", help="candidate trajectory CSV")
    p.add_argument("--out-dir", help="report directory")
    p.add_argument("--plots", action="store_true", default=None,
                   help="also render count and speed SVGs")

    p = command("plot", "render SVG plots from an evaluate series file",
                _cmd_plot)
    p.add_argument("--series", help="series CSV written by evaluate")
    p.add_argument("--scenario", help="scenario TOML (signal shading)")
    p.add_argument("--out-dir", help="SVG destination directory")

    return parser


def dispatch(argv) -> int:
    """Parse argv, run the chosen subcommand, map errors to exit codes."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    if getattr(args, "handler", None) is None:
        parser.print_help(sys.stderr)
        return 1
    try:
        args.handler(args)
    except UsageError as exc:
        print(f"pedflow: {exc}", file=sys.stderr)
        return 1
    except (PedflowError, ValueError) as exc:
        print(f"pedflow: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 3
    return 0


def main() -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(message)s")
    return dispatch(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
