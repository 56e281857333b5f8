import json
import subprocess
import sys

import pytest

from roundabout_cav import bundled_scenario
from roundabout_cav.cli import (
    EXIT_INFEASIBLE,
    EXIT_INVARIANT,
    EXIT_IO,
    EXIT_OK,
    EXIT_PARSE,
    cmd_run,
    main,
)

CROSSING = """\
paths:
  - {id: a, length: 3.0, nodes: [{id: n, station: 1.5}]}
  - {id: b, length: 3.0, nodes: [{id: n, station: 1.5}]}
arrivals:
  - {vehicle: c1, path: a, time: 0.0, speed: 0.1}
  - {vehicle: c2, path: b, time: 10.0, speed: 0.15}
"""


@pytest.fixture
def replica_file(tmp_path):
    path = tmp_path / "replica.yaml"
    path.write_text(bundled_scenario("replica"))
    return path


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


class TestValidate:
    def test_valid(self, replica_file, capsys):
        assert main(["validate", "--scenario", str(replica_file)]) == EXIT_OK
        assert "9 arrivals" in capsys.readouterr().out

    def test_dangling_reference(self, tmp_path, capsys):
        path = write(tmp_path, "s.yaml", CROSSING.replace("path: b", "path: zz"))
        assert main(["validate", "--scenario", path]) == EXIT_INVARIANT
        assert "arrivals[1].path" in capsys.readouterr().err

    def test_invalid_numeric(self, tmp_path, capsys):
        path = write(tmp_path, "s.yaml", CROSSING.replace("length: 3.0", "length: three", 1))
        assert main(["validate", "--scenario", path]) == EXIT_PARSE
        assert "paths[0].length" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert main(["validate", "--scenario", str(tmp_path / "none.yaml")]) == EXIT_IO

    def test_bad_override(self, replica_file):
        assert main(["validate", "--scenario", str(replica_file), "--set", "params.t_h"]) == EXIT_PARSE


class TestRun:
    def test_replica(self, replica_file, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["run", "--scenario", str(replica_file), "--out", str(out)]) == EXIT_OK
        text = capsys.readouterr().out
        assert "Travel Time RMSE" in text
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["violation_count"] == 0
        assert metrics["v_min_overall"] >= 0.05
        manifest = json.loads((out / "manifest.json").read_text())
        assert {e["file"] for e in manifest} >= {"schedule.csv", "trajectories.csv"}

    def test_empty_arrivals(self, tmp_path):
        path = write(tmp_path, "s.yaml", "paths:\n  - {id: a, length: 1.0}\narrivals: []\n")
        out = tmp_path / "out"
        assert cmd_run(path, out) == EXIT_OK
        assert (out / "schedule.csv").read_text().count("\n") == 1

    def test_infeasible_headway(self, replica_file, tmp_path, capsys):
        code = main(["run", "--scenario", str(replica_file), "--out", str(tmp_path / "o"),
                     "--set", "params.t_h=1e9"])
        assert code == EXIT_INFEASIBLE
        assert "blocking" in capsys.readouterr().err

    def test_delay_policy_rescues(self, tmp_path):
        doc = ("paths:\n  - {id: a, length: 3.0}\narrivals:\n"
               "  - {vehicle: s, path: a, time: 0.0, speed: 0.05}\n"
               "  - {vehicle: f, path: a, time: 0.5, speed: 0.15}\n")
        path = write(tmp_path, "s.yaml", doc)
        assert cmd_run(path, tmp_path / "e") == EXIT_INFEASIBLE
        assert cmd_run(path, tmp_path / "d", ["sim.infeasibility_policy=delay"]) == EXIT_OK

    def test_determinism(self, replica_file, tmp_path):
        for name in ("r1", "r2"):
            assert cmd_run(str(replica_file), tmp_path / name, seed=11) == EXIT_OK
        assert tree_bytes(tmp_path / "r1") == tree_bytes(tmp_path / "r2")

    def test_console_script(self, replica_file, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "roundabout_cav.cli", "validate", "--scenario", str(replica_file)],
            capture_output=True, text=True)
        assert proc.returncode == 0


class TestSweep:
    def test_single_point_matches_run(self, replica_file, tmp_path):
        assert main(["sweep", "--scenario", str(replica_file), "--out", str(tmp_path / "s")]) == EXIT_OK
        assert cmd_run(str(replica_file), tmp_path / "r") == EXIT_OK
        point = tmp_path / "s" / "point_000"
        assert tree_bytes(point) == tree_bytes(tmp_path / "r")

    def test_two_points(self, replica_file, tmp_path):
        out = tmp_path / "s"
        code = main(["sweep", "--scenario", str(replica_file), "--out", str(out),
                     "--param", "params.t_h=0.5,1.0"])
        assert code == EXIT_OK
        dirs = sorted(p.name for p in out.iterdir() if p.is_dir())
        assert dirs == ["point_000", "point_001"]
        index = json.loads((out / "index.json").read_text())
        assert [e["overrides"] for e in index] == [["params.t_h=0.5"], ["params.t_h=1.0"]]

    def test_parallel_matches_serial(self, replica_file, tmp_path):
        args = ["sweep", "--scenario", str(replica_file), "--param", "params.t_h=0.5,1.0"]
        assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
        assert main(args + ["--out", str(tmp_path / "b"), "--jobs", "2"]) == EXIT_OK
        assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")

    def test_offset_sweep_monotone(self, tmp_path):
        path = write(tmp_path, "s.yaml", CROSSING)
        out = tmp_path / "s"
        # the second entry moves toward the first, so the node conflict tightens
        code = main(["sweep", "--scenario", path, "--out", str(out),
                     "--param", "arrivals[1].time=5,4,3,2"])
        assert code == EXIT_OK
        horizons = []
        for i in range(4):
            rows = (out / f"point_{i:03d}" / "schedule.csv").read_text().splitlines()
            horizons.append(float(rows[2].split(",")[4]))
        assert horizons == sorted(horizons)
        assert horizons[-1] > horizons[0]

    def test_failing_point_reported(self, replica_file, tmp_path):
        out = tmp_path / "s"
        code = main(["sweep", "--scenario", str(replica_file), "--out", str(out),
                     "--param", "params.t_h=1.0,1e9"])
        assert code == EXIT_INFEASIBLE
        index = json.loads((out / "index.json").read_text())
        assert [e["exit_code"] for e in index] == [EXIT_OK, EXIT_INFEASIBLE]

    def test_malformed_param(self, replica_file, tmp_path):
        assert main(["sweep", "--scenario", str(replica_file), "--out", str(tmp_path / "s"),
                     "--param", "params.t_h"]) == EXIT_PARSE


class TestReport:
    def test_run_then_report(self, replica_file, tmp_path, capsys):
        out = tmp_path / "out"
        assert cmd_run(str(replica_file), out) == EXIT_OK
        assert main(["report", "--out", str(out)]) == EXIT_OK
        report = out / "report"
        for name in ("exit_times.csv", "speed_envelope.csv", "position_bands.csv", "node_bands.csv"):
            assert (report / name).read_bytes() == (out / name).read_bytes()
        rows = (report / "speed_envelope.csv").read_text().splitlines()[1:]
        for row in rows:
            lo, avg, hi = map(float, row.split(",")[2:5])
            assert lo <= avg <= hi

    def test_missing_schedule(self, replica_file, tmp_path, capsys):
        out = tmp_path / "out"
        assert cmd_run(str(replica_file), out) == EXIT_OK
        (out / "schedule.csv").unlink()
        capsys.readouterr()
        assert main(["report", "--out", str(out)]) == EXIT_IO
        assert "schedule.csv" in capsys.readouterr().err
