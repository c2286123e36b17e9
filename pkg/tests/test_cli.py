import json
import subprocess
import sys

import pytest

from otfsdet.cli import main

FAST = [
    "--set", "frame.M=4", "--set", "frame.N=4",
    "--set", "channel.n_paths=3", "--set", "channel.l_max=3",
    "--set", "detectors=lmmse,uamp-mfic",
    "--set", "snr_grid_db=10", "--set", "n_iter=4",
    "--set", "min_frames=2", "--set", "min_bit_errors=1",
    "--set", "frame_cap=8",
]


def run_cli(*argv):
    return main(list(argv))


class TestSweepCommands:
    def test_sweep_snr_end_to_end(self, tmp_path, capsys):
        out = tmp_path / "snr.csv"
        assert run_cli("sweep-snr", "--out", str(out), *FAST) == 0
        captured = capsys.readouterr().out
        assert f"wrote {out}" in captured
        assert "lmmse:" in captured and "uamp-mfic:" in captured
        assert out.exists()
        assert (tmp_path / "snr.csv.meta.json").exists()
        header = out.read_text().splitlines()[0]
        assert header.startswith("detector,snr_db,velocity_mps")

    def test_simulate_and_sweep_velocity(self, tmp_path):
        grid = ["--set", "velocity_grid=60,120"]
        assert run_cli("simulate", "--out", str(tmp_path / "grid.csv"),
                       *FAST, *grid) == 0
        assert run_cli("sweep-velocity", "--out", str(tmp_path / "vel.csv"),
                       *FAST, *grid) == 0
        vel_lines = (tmp_path / "vel.csv").read_text().splitlines()
        assert len(vel_lines) == 1 + 2 * 2  # two detectors at two velocities

    def test_sweep_iterations(self, tmp_path, capsys):
        out = tmp_path / "iters.csv"
        assert run_cli("sweep-iterations", "--out", str(out), *FAST) == 0
        lines = out.read_text().splitlines()
        assert lines[0].startswith("detector,snr_db,velocity_mps,iteration")
        assert len(lines) == 1 + 2 * 4  # two detectors, n_iter rows each
        assert "ber(iter 4)" in capsys.readouterr().out

    def test_seed_controls_output(self, tmp_path):
        a, b, c = (tmp_path / name for name in ("a.csv", "b.csv", "c.csv"))
        run_cli("sweep-snr", "--out", str(a), "--seed", "11", *FAST)
        run_cli("sweep-snr", "--out", str(b), "--seed", "11", *FAST)
        run_cli("sweep-snr", "--out", str(c), "--seed", "12", *FAST)
        assert a.read_bytes() == b.read_bytes()
        assert a.read_bytes() != c.read_bytes()

    def test_thread_count_does_not_change_results(self, tmp_path):
        one = tmp_path / "t1.csv"
        many = tmp_path / "t3.csv"
        run_cli("sweep-snr", "--out", str(one), "--threads", "1", *FAST)
        run_cli("sweep-snr", "--out", str(many), "--threads", "3", *FAST)
        assert one.read_bytes() == many.read_bytes()

    def test_config_file_with_override(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({
            "frame": {"M": 4, "N": 4},
            "channel": {"n_paths": 3, "l_max": 3},
            "detectors": ["lmmse"],
            "snr_grid_db": [8.0],
            "min_frames": 2, "min_bit_errors": 1, "frame_cap": 4,
        }))
        out = tmp_path / "from_cfg.csv"
        assert run_cli("sweep-snr", "--config", str(cfg_path), "--out", str(out),
                       "--set", "snr_grid_db=11") == 0
        meta = json.loads((tmp_path / "from_cfg.csv.meta.json").read_text())
        assert meta["config"]["snr_grid_db"] == [11.0]  # --set wins
        assert meta["config"]["frame"]["M"] == 4


class TestErrorPaths:
    def test_unknown_override_key_is_usage_error(self, capsys):
        assert run_cli("sweep-snr", *FAST, "--set", "gain=3") == 2
        assert "gain" in capsys.readouterr().err

    def test_unknown_detector_is_usage_error(self, capsys):
        assert run_cli("sweep-snr", "--set", "detectors=genie") == 2
        assert "genie" in capsys.readouterr().err

    def test_bad_config_file(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{broken")
        assert run_cli("sweep-snr", "--config", str(bad)) == 2
        assert "bad.json" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path):
        assert run_cli("sweep-snr", "--config", str(tmp_path / "none.json")) == 2

    def test_missing_command_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            run_cli()
        assert exc.value.code == 2

    def test_bad_thread_count(self, capsys):
        assert run_cli("sweep-snr", *FAST, "--threads", "0") == 2


class TestEmitPlotData:
    def make_sweep_csv(self, tmp_path):
        out = tmp_path / "snr.csv"
        run_cli("sweep-snr", "--out", str(out), *FAST,
                "--set", "snr_grid_db=8,12")
        return out

    def test_sweep_csv_yields_two_panels(self, tmp_path, capsys):
        out = self.make_sweep_csv(tmp_path)
        plots = tmp_path / "plots"
        assert run_cli("emit-plot-data", str(out), "--out-dir", str(plots)) == 0
        snr_dat = plots / "ber_vs_snr.dat"
        vel_dat = plots / "ber_vs_velocity.dat"
        assert snr_dat.exists() and vel_dat.exists()
        lines = snr_dat.read_text().splitlines()
        assert lines[1].split() == ["#", "snr_db", "lmmse", "uamp-mfic"]
        data = [line for line in lines if not line.startswith("#")]
        assert [row.split()[0] for row in data] == ["8", "12"]
        assert all(len(row.split()) == 3 for row in data)

    def test_iteration_csv_yields_trace_panel(self, tmp_path):
        out = tmp_path / "iters.csv"
        run_cli("sweep-iterations", "--out", str(out), *FAST)
        assert run_cli("emit-plot-data", str(out), "--out-dir", str(tmp_path)) == 0
        lines = (tmp_path / "ber_vs_iteration.dat").read_text().splitlines()
        data = [line for line in lines if not line.startswith("#")]
        assert [row.split()[0] for row in data] == ["1", "2", "3", "4"]

    def test_foreign_header_rejected(self, tmp_path, capsys):
        alien = tmp_path / "alien.csv"
        alien.write_text("foo,bar\n1,2\n")
        assert run_cli("emit-plot-data", str(alien)) == 2
        assert "header" in capsys.readouterr().err

    def test_missing_results_file(self, tmp_path):
        assert run_cli("emit-plot-data", str(tmp_path / "ghost.csv")) == 2


class TestEntryPoint:
    def test_module_invocation(self, tmp_path):
        out = tmp_path / "m.csv"
        proc = subprocess.run(
            [sys.executable, "-m", "otfsdet", "sweep-snr", "--out", str(out),
             *FAST],
            capture_output=True, text=True, timeout=120)
        assert proc.returncode == 0, proc.stderr
        assert out.exists()

    def test_selftest_passes(self):
        assert run_cli("selftest") == 0
