import json
import subprocess
import sys

import numpy as np
import pytest

from ogmm.cli import main
from ogmm.geometry import PointCloud
from ogmm.io import sample_shape, write_cloud

TINY_CONFIG = {
    "overlap_fractions": [0.7],
    "cluster_counts": [8],
    "trials": 2,
    "n_points": 64,
    "methods": ["ogmm_unguided", "icp"],
}


@pytest.fixture
def cloud_file(tmp_path):
    cloud = sample_shape("composite", 96, seed=11)
    path = tmp_path / "cloud.xyz"
    write_cloud(cloud, path)
    return path


def write_config(tmp_path, payload):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(payload))
    return path


def stderr_kind(capsys):
    return json.loads(capsys.readouterr().err)["error"]["kind"]


class TestRegisterCommand:
    def test_self_registration_to_stdout(self, tmp_path, cloud_file, capsys):
        code = main(["register", str(cloud_file), str(cloud_file), "--profile", "desk"])
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        rotation = np.asarray(payload["rotation"]).reshape(3, 3)
        assert np.allclose(rotation, np.eye(3), atol=1e-6)
        assert np.allclose(payload["translation"], 0.0, atol=1e-6)
        assert len(payload["overlap_source"]) == 96
        assert "runtime_ms" in payload["diagnostics"]

    def test_out_file(self, tmp_path, cloud_file):
        out = tmp_path / "result.json"
        code = main([
            "register", str(cloud_file), str(cloud_file),
            "--profile", "desk", "--out", str(out),
        ])
        assert code == 0
        assert "rotation" in json.loads(out.read_text())

    def test_missing_file_is_io_error(self, tmp_path, capsys):
        code = main(["register", str(tmp_path / "nope.xyz"), str(tmp_path / "nope.xyz")])
        assert code == 2
        assert stderr_kind(capsys) == "io"

    def test_cloud_too_small_for_profile_is_config_error(self, cloud_file, capsys):
        # paper profile wants 72 geometric clusters; 96 points pass, but a
        # desk-sized cloud under the paper profile must fail loudly.
        small = sample_shape("sphere", 32, seed=1)
        path = cloud_file.parent / "small.xyz"
        write_cloud(small, path)
        code = main(["register", str(path), str(path), "--profile", "paper"])
        assert code == 1
        assert stderr_kind(capsys) == "config"

    def test_collinear_cloud_is_degenerate(self, tmp_path, capsys):
        t = np.linspace(0.0, 1.0, 48)
        line = PointCloud(np.column_stack([t, 2.0 * t, -t]))
        path = tmp_path / "line.xyz"
        write_cloud(line, path)
        code = main(["register", str(path), str(path), "--profile", "desk"])
        assert code == 3
        assert stderr_kind(capsys) == "degenerate"


class TestConfigHandling:
    def test_unknown_key_is_config_error(self, tmp_path, cloud_file, capsys):
        config = write_config(tmp_path, {"trails": 3})
        code = main([
            "register", str(cloud_file), str(cloud_file),
            "--profile", "desk", "--config", str(config),
        ])
        assert code == 1
        assert stderr_kind(capsys) == "config"

    def test_invalid_json_is_config_error(self, tmp_path, cloud_file, capsys):
        config = tmp_path / "config.json"
        config.write_text("{not json")
        code = main([
            "register", str(cloud_file), str(cloud_file), "--config", str(config),
        ])
        assert code == 1
        assert stderr_kind(capsys) == "config"

    def test_missing_config_is_io_error(self, tmp_path, cloud_file, capsys):
        code = main([
            "register", str(cloud_file), str(cloud_file),
            "--config", str(tmp_path / "nope.json"),
        ])
        assert code == 2
        assert stderr_kind(capsys) == "io"

    def test_seed_env_override(self, tmp_path, monkeypatch, capsys):
        config = write_config(tmp_path, dict(TINY_CONFIG, trials=1))
        monkeypatch.setenv("OGMM_SEED", "7")
        assert main(["genpairs", "--config", str(config), "--out", str(tmp_path / "env")]) == 0
        monkeypatch.delenv("OGMM_SEED")
        explicit = write_config(tmp_path, dict(TINY_CONFIG, trials=1, base_seed=7))
        assert main(["genpairs", "--config", str(explicit), "--out", str(tmp_path / "cfg")]) == 0
        capsys.readouterr()
        env_manifest = (tmp_path / "env" / "manifest.json").read_bytes()
        cfg_manifest = (tmp_path / "cfg" / "manifest.json").read_bytes()
        assert env_manifest == cfg_manifest

    def test_bad_seed_env_is_config_error(self, tmp_path, cloud_file, monkeypatch, capsys):
        monkeypatch.setenv("OGMM_SEED", "twelve")
        code = main(["register", str(cloud_file), str(cloud_file), "--profile", "desk"])
        assert code == 1
        assert stderr_kind(capsys) == "config"


class TestBenchAndReport:
    def run_bench_cli(self, tmp_path, name, workers=1):
        config = write_config(tmp_path, TINY_CONFIG)
        out = tmp_path / name
        code = main([
            "bench", "--config", str(config), "--out", str(out),
            "--workers", str(workers),
        ])
        assert code == 0
        return out

    def test_bench_writes_csv_and_summary(self, tmp_path, capsys):
        out = self.run_bench_cli(tmp_path, "bench.csv")
        lines = out.read_text().splitlines()
        assert len(lines) == 1 + 2 * 2  # header + trials x methods
        summary = json.loads((tmp_path / "bench.csv.summary.json").read_text())
        assert summary["rows"] == 4

    def test_bench_workers_agree(self, tmp_path, capsys):
        def strip_runtime(path):
            lines = path.read_text().splitlines()
            idx = lines[0].split(",").index("runtime_ms")
            return [
                ",".join(v for i, v in enumerate(line.split(",")) if i != idx)
                for line in lines
            ]

        serial = self.run_bench_cli(tmp_path, "serial.csv", workers=1)
        threaded = self.run_bench_cli(tmp_path, "threaded.csv", workers=2)
        assert strip_runtime(serial) == strip_runtime(threaded)

    def test_report_from_bench(self, tmp_path, capsys):
        out = self.run_bench_cli(tmp_path, "bench.csv")
        code = main(["report", str(out), "--out", str(tmp_path / "report")])
        assert code == 0
        assert (tmp_path / "report" / "by_overlap_fraction.csv").exists()
        assert len(list((tmp_path / "report").glob("*.svg"))) == 5

    def test_report_without_data_is_io_error(self, tmp_path, capsys):
        from ogmm.bench import CSV_HEADER

        empty = tmp_path / "empty.csv"
        empty.write_text(CSV_HEADER + "\n")
        code = main(["report", str(empty), "--out", str(tmp_path / "report")])
        assert code == 2
        assert stderr_kind(capsys) == "io"


class TestGenpairsCommand:
    def test_writes_pairs(self, tmp_path, capsys):
        config = write_config(tmp_path, TINY_CONFIG)
        code = main(["genpairs", "--config", str(config), "--out", str(tmp_path / "pairs")])
        assert code == 0
        manifest = json.loads((tmp_path / "pairs" / "manifest.json").read_text())
        assert manifest["pair_count"] == 2
        assert (tmp_path / "pairs" / manifest["pairs"][0]["path"] / "source.ply").exists()


def test_module_entry_point(tmp_path):
    cloud = sample_shape("sphere", 48, seed=2)
    path = tmp_path / "cloud.xyz"
    write_cloud(cloud, path)
    proc = subprocess.run(
        [sys.executable, "-m", "ogmm.cli", "register", str(path), str(path), "--profile", "desk"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert "rotation" in json.loads(proc.stdout)
