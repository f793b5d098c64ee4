"""Command line checks: artifacts, exit codes, manifests, determinism."""

import json

import numpy as np
import pytest

from pedflow.cli import dispatch
from pedflow.dataset import load_dataset, transition_mask
from pedflow.geometry import ProjectionMatrix, project
from pedflow.net.params import ModelParams
from pedflow.raster import EnvironmentRaster, write_raster
from pedflow.trajectory import Trajectory, read_trajectories, write_trajectories

MINI_TOML = """\
schema_version = 1
name = "mini"

edges = ["E(1:2)", "E(2:2)", "E(2:3)"]

[signal]
period = 60.0
green_start = 10.0
green_end = 40.0

[raster]
path = "mini_raster.csv"

[crosswalk]
polygon = [[8.0, -2.0], [12.0, -2.0], [12.0, 2.0], [8.0, 2.0]]

[[node]]
id = 1
anchor = [0.0, 0.0]
radius = 1.5

[[node]]
id = 2
anchor = [10.0, 0.0]
radius = 1.5
signal = true

[[node]]
id = 3
anchor = [20.0, 0.0]
radius = 1.5

[[flow]]
id = "f"
edges = ["E(1:2)", "E(2:2)", "E(2:3)"]
goal = 3
spawn_interval = 2.0
spawn_offset = 0.0

[[flow.spawn_area]]
center = [-3.0, 0.0]
radius = 1.0
"""


@pytest.fixture(scope="session")
def mini_path(tmp_path_factory):
    root = tmp_path_factory.mktemp("scene")
    path = root / "mini.toml"
    path.write_text(MINI_TOML)
    write_raster(EnvironmentRaster(np.full((25, 45), 1.0),
                                   origin=(-8.0, -12.0), meters_per_cell=1.0),
                 root / "mini_raster.csv")
    return path


@pytest.fixture(scope="session")
def gen_dir(mini_path, tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    code = dispatch(["gen-data", "--scenario", str(mini_path),
                     "--agents", "8", "--seed", "7", "--out", str(out)])
    assert code == 0
    return out


@pytest.fixture(scope="session")
def dataset_path(mini_path, gen_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("ds") / "mini.npz"
    code = dispatch(["prepare", "--scenario", str(mini_path),
                     "--trajectories", str(gen_dir / "trajectories.csv"),
                     "--out", str(out), "--seed", "1"])
    assert code == 0
    return out


@pytest.fixture(scope="session")
def checkpoint_path(mini_path, dataset_path, tmp_path_factory):
    out = tmp_path_factory.mktemp("ck") / "model.npz"
    code = dispatch(["train", "--dataset", str(dataset_path),
                     "--scenario", str(mini_path), "--out", str(out),
                     "--epochs", "1", "--batch-size", "32", "--seed", "0"])
    assert code == 0
    return out


def _line(aid, t0, p0, v, n, dt=0.2):
    t = t0 + dt * np.arange(n)
    xy = np.asarray(p0, dtype=float) + np.outer(dt * np.arange(n), v)
    return Trajectory(aid, t, xy)


class TestTopLevel:
    def test_version(self, capsys):
        assert dispatch(["--version"]) == 0
        out = capsys.readouterr().out
        assert "pedflow" in out and "schema" in out

    def test_no_subcommand_is_usage_error(self):
        assert dispatch([]) == 1

    def test_unknown_flag(self):
        assert dispatch(["gen-data", "--bogus"]) == 1

    def test_missing_required_option(self, capsys):
        assert dispatch(["calibrate"]) == 1
        assert "--points" in capsys.readouterr().err


CAL_M = np.array([[820.0, 14.0, 36.0, 310.0],
                  [5.0, -790.0, 52.0, 230.0],
                  [0.0012, 0.0021, 0.0006, 1.0]])


def _points_csv(path, n=12, seed=5):
    rng = np.random.default_rng(seed)
    lines = ["u,v,X,Y,Z"]
    for w in rng.uniform(-6.0, 6.0, (n, 3)):
        h = CAL_M @ np.append(w, 1.0)
        row = [h[0] / h[2], h[1] / h[2], w[0], w[1], w[2]]
        lines.append(",".join(repr(float(v)) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


class TestCalibrate:
    def test_matrix_file_and_manifest(self, tmp_path, capsys):
        pts = _points_csv(tmp_path / "pts.csv")
        out = tmp_path / "M.csv"
        assert dispatch(["calibrate", "--points", str(pts),
                         "--out", str(out)]) == 0
        vals = np.array([float(v) for v in
                         out.read_text().strip().split(",")])
        assert vals.shape == (12,)
        matrix = ProjectionMatrix(vals.reshape(3, 4))
        rng = np.random.default_rng(5)
        for w in rng.uniform(-6.0, 6.0, (12, 3)):
            h = CAL_M @ np.append(w, 1.0)
            uv = project(matrix, w)
            assert abs(uv[0] - h[0] / h[2]) < 1e-7
            assert abs(uv[1] - h[1] / h[2]) < 1e-7
        assert "residuals" in capsys.readouterr().out
        manifest = json.loads((tmp_path / "M.csv.manifest.json").read_text())
        assert manifest["subcommand"] == "calibrate"
        assert manifest["outputs"] == [str(out)]
        assert manifest["versions"]["tool"]

    def test_stdout_mode(self, tmp_path, capsys):
        pts = _points_csv(tmp_path / "pts.csv")
        assert dispatch(["calibrate", "--points", str(pts)]) == 0
        first = capsys.readouterr().out.splitlines()[0]
        assert len(first.split(",")) == 12

    def test_bad_header(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("a,b,c,d,e\n1,2,3,4,5\n")
        assert dispatch(["calibrate", "--points", str(bad)]) == 2

    def test_bad_row(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("u,v,X,Y,Z\n1,2,three,4,5\n")
        assert dispatch(["calibrate", "--points", str(bad)]) == 2


class TestGenData:
    def test_artifacts(self, gen_dir, mini_path):
        trajs = read_trajectories(gen_dir / "trajectories.csv")
        assert len(trajs) == 8
        assert sorted(tr.agent_id for tr in trajs)[0] == "f_0000"
        manifest = json.loads((gen_dir / "manifest.json").read_text())
        assert manifest["subcommand"] == "gen-data"
        assert manifest["seed"] == 7
        assert manifest["config"]["agents"] == 8
        import hashlib
        want = hashlib.sha256(mini_path.read_bytes()).hexdigest()
        assert manifest["scenario_hash"] == want

    def test_seeded_rerun_is_byte_identical(self, mini_path, gen_dir,
                                            tmp_path):
        out = tmp_path / "again"
        assert dispatch(["gen-data", "--scenario", str(mini_path),
                         "--agents", "8", "--seed", "7",
                         "--out", str(out)]) == 0
        assert (out / "trajectories.csv").read_bytes() == \
            (gen_dir / "trajectories.csv").read_bytes()

    def test_agents_and_duration_conflict(self, mini_path, tmp_path):
        assert dispatch(["gen-data", "--scenario", str(mini_path),
                         "--agents", "4", "--duration", "10",
                         "--out", str(tmp_path / "x")]) == 1


class TestPrepare:
    def test_dataset_is_balanced(self, dataset_path):
        sset, meta = load_dataset(dataset_path)
        mask = transition_mask(sset)
        assert sset.n > 0
        assert 2 * int(mask.sum()) == sset.n
        assert meta["seed"] == 1
        assert meta["n_raw"] >= sset.n

    def test_manifest(self, dataset_path):
        manifest = json.loads(
            (dataset_path.parent / "mini.npz.manifest.json").read_text())
        assert manifest["subcommand"] == "prepare"
        assert str(dataset_path) in manifest["outputs"]

    def test_no_transitions_exit_2(self, mini_path, tmp_path, capsys):
        # one short hop that never leaves its first edge
        tr = _line("f_0000", 0.0, (1.0, 0.0), (1.3, 0.0), 6)
        src = tmp_path / "flat.csv"
        write_trajectories(src, [tr])
        code = dispatch(["prepare", "--scenario", str(mini_path),
                         "--trajectories", str(src),
                         "--out", str(tmp_path / "flat.npz")])
        assert code == 2
        assert "NoTransitions" in capsys.readouterr().err


class TestTrain:
    def test_checkpoint_and_losses(self, checkpoint_path):
        params = ModelParams.load(checkpoint_path)
        assert params.config.n_edges == 3
        losses = (checkpoint_path.parent / "model.npz.losses.csv") \
            .read_text().splitlines()
        assert losses[0] == "epoch,train_loss,val_loss,lr"
        assert len(losses) == 2
        manifest = json.loads(
            (checkpoint_path.parent / "model.npz.manifest.json").read_text())
        assert manifest["config"]["epochs"] == 1


class TestSimulate:
    def test_run_with_state_dump(self, mini_path, checkpoint_path, tmp_path):
        out = tmp_path / "sim.csv"
        dump = tmp_path / "steps.jsonl"
        assert dispatch(["simulate", "--scenario", str(mini_path),
                         "--checkpoint", str(checkpoint_path),
                         "--duration", "4", "--seed", "3",
                         "--out", str(out), "--state-dump", str(dump)]) == 0
        trajs = read_trajectories(out)
        assert len(trajs) == 2
        assert all(tr.n > 0 for tr in trajs)
        recs = [json.loads(line) for line in dump.read_text().splitlines()]
        assert len(recs) > 0
        frames = [r["frame"] for r in recs]
        assert frames == sorted(frames)
        assert all(set(a) == {"id", "x", "y"}
                   for r in recs for a in r["agents"])

    def test_replace_ids_without_ref(self, mini_path, checkpoint_path,
                                     tmp_path):
        assert dispatch(["simulate", "--scenario", str(mini_path),
                         "--checkpoint", str(checkpoint_path),
                         "--replace-ids", "f_0000",
                         "--out", str(tmp_path / "x.csv")]) == 1

    def test_replacement_mode(self, mini_path, checkpoint_path, tmp_path):
        ref_path = tmp_path / "ref.csv"
        write_trajectories(ref_path, [
            _line("f_0000", 0.0, (0.0, 0.0), (1.3, 0.0), 20),
            _line("f_0001", 0.0, (0.0, 1.0), (1.3, 0.0), 20),
        ])
        out = tmp_path / "repl.csv"
        assert dispatch(["simulate", "--scenario", str(mini_path),
                         "--checkpoint", str(checkpoint_path),
                         "--replace-ref", str(ref_path),
                         "--replace-ids", "f_0001",
                         "--out", str(out)]) == 0
        by_id = {tr.agent_id: tr for tr in read_trajectories(out)}
        assert set(by_id) == {"f_0000", "f_0001"}
        ref = _line("f_0000", 0.0, (0.0, 0.0), (1.3, 0.0), 20)
        assert np.allclose(by_id["f_0000"].xy, ref.xy)

    def test_mismatched_checkpoint_leaves_manifest_only(self, checkpoint_path,
                                                        tmp_path):
        from pedflow.scenario import load_bundled_scenario
        other = load_bundled_scenario().source_path
        out = tmp_path / "sim.csv"
        code = dispatch(["simulate", "--scenario", str(other),
                         "--checkpoint", str(checkpoint_path),
                         "--duration", "4", "--out", str(out)])
        assert code == 2
        assert (tmp_path / "sim.csv.manifest.json").exists()
        assert not out.exists()


class TestInterpolate:
    def test_closes_planted_gap(self, mini_path, tmp_path):
        a = _line("f_0000", 0.0, (-2.8, 0.0), (1.4, 0.0), 11)
        b = _line("f_0001", 4.0, (2.8, 0.0), (1.4, 0.0), 11)
        src = tmp_path / "frags.csv"
        write_trajectories(src, [a, b])
        out = tmp_path / "joined.csv"
        assert dispatch(["interpolate", "--scenario", str(mini_path),
                         "--trajectories", str(src), "--out", str(out)]) == 0
        trajs = read_trajectories(out)
        assert len(trajs) == 1
        assert trajs[0].agent_id == "f_0000+f_0001"
        assert trajs[0].n == 30

    def test_foreign_ids_pass_through(self, mini_path, tmp_path):
        tr = _line("track99", 0.0, (0.0, 5.0), (1.0, 0.0), 6)
        src = tmp_path / "frags.csv"
        write_trajectories(src, [tr])
        out = tmp_path / "joined.csv"
        assert dispatch(["interpolate", "--scenario", str(mini_path),
                         "--trajectories", str(src), "--out", str(out)]) == 0
        assert [t.agent_id for t in read_trajectories(out)] == ["track99"]


def _crosser_csv(path, shift=0.0):
    # two walkers straight through the region, staggered by 2 s
    trajs = [_line(f"f_{k:04d}", 2.0 * k, (5.0 + shift, 0.0),
                   (1.0, 0.0), 51) for k in range(2)]
    write_trajectories(path, trajs)
    return path


class TestEvaluate:
    def test_report_artifacts(self, mini_path, tmp_path):
        act = _crosser_csv(tmp_path / "act.csv")
        sim = _crosser_csv(tmp_path / "sim.csv", shift=0.2)
        report = tmp_path / "report"
        assert dispatch(["evaluate", "--scenario", str(mini_path),
                         "--actual", str(act), "--simulated", str(sim),
                         "--out-dir", str(report), "--plots"]) == 0
        summary = json.loads((report / "summary.json").read_text())
        vals = summary["flows"]["f"]
        assert vals["count_rmse"] >= 0.0
        assert vals["speed_rmse"] >= 0.0
        header = (report / "series.csv").read_text().splitlines()[0]
        assert header == ("t,f_count_actual,f_count_sim,"
                          "f_speed_actual,f_speed_sim")
        assert (report / "count.svg").exists()
        assert (report / "speed.svg").exists()
        manifest = json.loads((report / "manifest.json").read_text())
        assert str(report / "count.svg") in manifest["outputs"]

    def test_plot_subcommand_matches_evaluate(self, mini_path, tmp_path):
        act = _crosser_csv(tmp_path / "act.csv")
        sim = _crosser_csv(tmp_path / "sim.csv", shift=0.2)
        report = tmp_path / "report"
        assert dispatch(["evaluate", "--scenario", str(mini_path),
                         "--actual", str(act), "--simulated", str(sim),
                         "--out-dir", str(report), "--plots"]) == 0
        plots = tmp_path / "plots"
        assert dispatch(["plot", "--series", str(report / "series.csv"),
                         "--scenario", str(mini_path),
                         "--out-dir", str(plots)]) == 0
        for name in ("count.svg", "speed.svg"):
            assert (plots / name).read_bytes() == \
                (report / name).read_bytes()

    def test_empty_series_exit_2(self, mini_path, tmp_path):
        src = tmp_path / "empty.csv"
        src.write_text("t,f_count_actual\n")
        assert dispatch(["plot", "--series", str(src),
                         "--scenario", str(mini_path),
                         "--out-dir", str(tmp_path / "p")]) == 2

    def test_malformed_column_name(self, mini_path, tmp_path):
        src = tmp_path / "odd.csv"
        src.write_text("t,f_wat_actual\n0.0,1.0\n")
        assert dispatch(["plot", "--series", str(src),
                         "--scenario", str(mini_path),
                         "--out-dir", str(tmp_path / "p")]) == 2


class TestConfigFile:
    def test_flags_beat_config(self, mini_path, tmp_path):
        cfg = tmp_path / "run.toml"
        cfg.write_text('[gen-data]\n'
                       f'scenario = "{mini_path}"\n'
                       'agents = 6\n'
                       'seed = 2\n'
                       f'out = "{tmp_path / "out"}"\n')
        assert dispatch(["gen-data", "--config", str(cfg),
                         "--agents", "3"]) == 0
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert manifest["config"]["agents"] == 3
        assert manifest["config"]["seed"] == 2
        assert len(read_trajectories(tmp_path / "out" / "trajectories.csv")) \
            == 3

    def test_missing_config_file(self, tmp_path):
        assert dispatch(["gen-data", "--config",
                         str(tmp_path / "nope.toml")]) == 1
