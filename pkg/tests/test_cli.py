import csv
import subprocess
import sys

import numpy as np
import pytest

from forestinv import __version__
from forestinv.cli import main
from forestinv.cloud import PointCloud
from forestinv.config import PipelineConfig
from forestinv.io import write_point_cloud


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "forest", "--seed", "7", "--trees", "10", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def run_dir(synth_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = main(["inventory", "run", "--input", str(synth_dir / "cloud.ply"), "--out", str(out),
                 "--plot-id", "synth"])
    assert code == 0
    return out


def test_end_to_end_inventory(run_dir):
    rows = list(csv.DictReader(open(run_dir / "inventory.csv", newline="")))
    assert 9 <= len(rows) <= 11
    assert (run_dir / "inventory.geojson").exists()
    assert (run_dir / "dtm_0000.asc").exists()


def test_eval_dbh_on_run(run_dir, synth_dir, tmp_path, capsys):
    report = tmp_path / "dbh.csv"
    assert main(["eval", "dbh", "--pred", str(run_dir), "--gt", str(synth_dir / "truth.csv"),
                 "--out", str(report)]) == 0
    overall = report.read_text().splitlines()[-1].split(",")
    assert overall[0] == "overall"
    assert float(overall[1]) >= 0.95 and float(overall[3]) <= 2.0
    assert "RMSE" in capsys.readouterr().out


def test_eval_pq_identical_files(synth_dir, tmp_path, capsys):
    cloud = synth_dir / "cloud.ply"
    out = tmp_path / "pq.csv"
    assert main(["eval", "pq", "--pred", str(cloud), "--gt", str(cloud), "--out", str(out)]) == 0
    table = capsys.readouterr().out.splitlines()
    assert table[0].split()[-1] == "PQ" and table[1].split()[-1] == "100.0"
    assert out.read_text().splitlines()[-1] == "pq,1.000000,100.0"


def test_eval_pq_count_mismatch(tmp_path, capsys):
    a = PointCloud(np.zeros((2, 3)), semantic=np.zeros(2, np.uint8))
    b = PointCloud(np.zeros((3, 3)), semantic=np.zeros(3, np.uint8))
    write_point_cloud(a, tmp_path / "a.ply")
    write_point_cloud(b, tmp_path / "b.ply")
    assert main(["eval", "pq", "--pred", str(tmp_path / "a.ply"), "--gt", str(tmp_path / "b.ply")]) == 1
    assert "mismatch" in capsys.readouterr().err


def test_missing_input_is_usage_error(tmp_path, capsys):
    assert main(["inventory", "run", "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert "usage:" in err and "--input" in err


def test_nonexistent_input(tmp_path, capsys):
    assert main(["inventory", "run", "--input", str(tmp_path / "x.ply"), "--out", str(tmp_path)]) == 1
    assert "does not exist" in capsys.readouterr().err


def test_bad_config_key(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("dbscan.epsilon = 3\n")
    assert main(["config", "print", "--config", str(cfg)]) == 1
    assert "unknown config key" in capsys.readouterr().err


def test_config_print(capsys):
    assert main(["config", "print"]) == 0
    assert capsys.readouterr().out == PipelineConfig().to_text()
    assert main(["--print-config"]) == 0
    assert capsys.readouterr().out == PipelineConfig().to_text()


def test_no_subcommand(capsys):
    assert main([]) == 1
    assert main(["eval"]) == 1


def test_version_subprocess():
    out = subprocess.run([sys.executable, "-m", "forestinv", "--version"],
                         capture_output=True, text=True, check=True)
    assert out.stdout.startswith(f"forestinv {__version__} (config schema ")


def test_trajectory_input(tmp_path):
    # Two scans in the sensor frame, placed in the world by the trajectory.
    scans = tmp_path / "scans"
    scans.mkdir()
    write_point_cloud(PointCloud(np.array([[1.0, 0.0, 0.0]])), scans / "s0.ply")
    write_point_cloud(PointCloud(np.array([[2.0, 0.0, 0.0]])), scans / "s1.ply")
    (scans / "scans.csv").write_text("file,timestamp\ns0.ply,0.0\ns1.ply,1.0\n")
    traj = tmp_path / "traj.csv"
    traj.write_text("timestamp,tx,ty,tz,qx,qy,qz,qw\n0,0,0,0,0,0,0,1\n1,1,0,0,0,0,0,1\n")
    out = tmp_path / "out"
    assert main(["inventory", "run", "--input", str(scans), "--trajectory", str(traj),
                 "--out", str(out)]) == 0
    text = (out / "inventory.csv").read_bytes()
    assert text.startswith(b"tree_id,x,y")


@pytest.mark.slow
def test_runs_are_byte_identical(synth_dir, tmp_path):
    outputs = []
    for k in range(2):
        out = tmp_path / f"r{k}"
        cfg = tmp_path / "w.cfg"
        cfg.write_text(f"workers = {1 + k}\n")  # serial and parallel must agree
        assert main(["inventory", "run", "--input", str(synth_dir / "cloud.ply"),
                     "--config", str(cfg), "--out", str(out)]) == 0
        outputs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert outputs[0].keys() == outputs[1].keys()
    names = [n for n in outputs[0] if n != "inventory.meta.json"]
    assert all(outputs[0][n] == outputs[1][n] for n in names)
