import random
import subprocess
import sys
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glckpt import cli, minigl
from glckpt.harness import reference, scenarios
from glckpt.harness.bench import BenchReport, bench_overhead, bench_restart, overhead_ratio
from glckpt.harness.workloads import (
    FB_SIZE_ENV,
    Gears,
    ModelLoad,
    RandomApp,
    Workload,
    burn_cpu,
    fb_size_from_env,
    load_app,
    run_workload,
)
from glckpt.splitproc import Session

BLACK_HASH = 0x6927FAC75E74A325


def kv(text):
    return dict(line.split("=", 1) for line in text.strip().splitlines() if "=" in line)


class TestWorkloads:
    def test_gears_zero_frames_is_default(self):
        _, h = run_workload(Workload("gears", 0, 1), minigl.create_driver(0))
        assert h == BLACK_HASH

    def test_gears_deterministic(self):
        a = run_workload(Workload("gears", 100, 1), minigl.create_driver(0))[1]
        b = run_workload(Workload("gears", 100, 1), minigl.create_driver(0))[1]
        assert a == b != BLACK_HASH

    def test_gears_bare_vs_interposed(self):
        bare = run_workload(Workload("gears", 100, 1), minigl.create_driver(0))[1]
        inter = run_workload(Workload("gears", 100, 1), Session.launch(5, None).gl)[1]
        assert bare == inter

    def test_gears_call_shape(self):
        s = Session.launch(0, None)
        run_workload(Workload("gears", 3, 0), s.gl)
        ops = [r.opcode.name for r in s.log]
        assert ops[0] == "CREATE_CONTEXT"
        assert ops[1:5] == ["SET_STATE", "CLEAR", "DRAW_TRIANGLE", "DRAW_TRIANGLE"]
        assert len(ops) == 1 + 3 * Gears.calls_per_frame

    @pytest.mark.parametrize("name", ["gears", "random"])
    def test_log_len_counts_calls(self, name):
        s = Session.launch(0, None)
        app, _ = run_workload(Workload(name, 50, 2), s.gl)
        expected = app.setup_calls + 50 * app.calls_per_frame
        if isinstance(app, RandomApp):
            # reads and skipped no-op steps are not logged
            assert len(s.log) <= expected
        else:
            assert len(s.log) == expected

    def test_modelload_call_shape(self):
        s = Session.launch(0, None)
        app, _ = run_workload(Workload("modelload", 10, 3, synth_load_ms_per_unit=0.1), s.gl)
        assert len(s.log) == 1 + 10 * ModelLoad.calls_per_frame
        assert len(app.model) == 640

    def test_app_state_round_trip(self):
        app = RandomApp(seed=5)
        app.start(Session.launch(0, None).gl)
        back = load_app(app.to_bytes())
        assert type(back) is RandomApp and back == app

    def test_bad_workload(self):
        with pytest.raises(ValueError):
            Workload("quake", 1)
        with pytest.raises(ValueError):
            Workload("gears", -1)

    def test_fb_size_env(self, monkeypatch):
        monkeypatch.setenv(FB_SIZE_ENV, "32x16")
        assert fb_size_from_env() == (32, 16)
        app, _ = run_workload(Workload("gears", 5, 0), minigl.create_driver(0))
        assert app.fb_size == (32, 16)
        monkeypatch.setenv(FB_SIZE_ENV, "big")
        with pytest.raises(ValueError):
            fb_size_from_env()
        monkeypatch.delenv(FB_SIZE_ENV)
        assert fb_size_from_env() == (64, 64)

    def test_burn_cpu_takes_time(self):
        t0 = time.perf_counter()
        burn_cpu(20)
        assert time.perf_counter() - t0 >= 0.02


class TestBench:
    def test_ratio_arithmetic(self):
        assert overhead_ratio(0.100, 0.110) == pytest.approx(0.10)

    def test_overhead_report(self):
        rep = bench_overhead(Workload("gears", 200, 0), repeats=3)
        assert rep.overhead_ratio == (rep.interposed_duration - rep.baseline_duration) / rep.baseline_duration
        assert rep.log_len == 1 + 200 * Gears.calls_per_frame
        assert rep.baseline_duration > 0 and rep.interposed_duration > 0
        lines = kv("\n".join(rep.as_lines()))
        assert "overhead_ratio" in lines and len(lines["fb_hash"]) == 16

    def test_overhead_needs_three_repeats(self):
        with pytest.raises(ValueError):
            bench_overhead(Workload("gears", 10), repeats=2)

    def test_restart(self):
        rep = bench_restart(Workload("modelload", 20, 1, synth_load_ms_per_unit=10.0))
        assert rep.pruned_len == rep.log_len
        assert min(rep.coldstart_duration, rep.ckpt_duration, rep.restore_duration) >= 0
        assert rep.restore_duration < rep.coldstart_duration

    def test_restart_pruned(self):
        rep = bench_restart(Workload("modelload", 20, 1, synth_load_ms_per_unit=1.0), prune=True)
        assert rep.pruned_len <= rep.log_len

    def test_restart_rejects_zero_load(self):
        with pytest.raises(ValueError):
            bench_restart(Workload("modelload", 5, 0, synth_load_ms_per_unit=0.0))

    def test_report_defaults(self):
        assert BenchReport().as_lines()[0] == "workload="


class TestReference:
    def test_unit_square_half(self):
        assert reference.covered_pixels((0, 0), (2, 0), (0, 2), (0, 0, 4, 4)) == {(0, 0)}

    def test_drawn_pixels(self):
        before = bytes(16)
        after = bytes(4) + b"\x01" + bytes(11)
        assert reference.drawn_pixels(before, after, 2) == {(1, 0)}

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32))
    def test_raster_scenario(self, seed):
        out = scenarios.raster_oracle(random.Random(seed))
        assert out.ok, out.detail


class TestScenarios:
    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2**30), st.integers(1, 300), st.integers(0, 2**32), st.integers(0, 2**32))
    def test_replay_equivalence(self, app_seed, calls, s1, s2):
        out = scenarios.replay_equivalence(app_seed, calls, s1, s2)
        assert out.ok, out.detail
        (image, lower), = out.images
        assert lower and scenarios.lower_half_excluded(image, lower)

    def test_transparency(self):
        assert scenarios.transparency(3, 200, 9).ok

    def test_prune_soundness(self):
        assert scenarios.prune_soundness(3, 400).ok


class TestCli:
    def test_run_deterministic(self, capsys):
        assert cli.main(["run", "--workload", "gears", "--frames", "30", "--seed", "2"]) == 0
        first = kv(capsys.readouterr().out)
        assert cli.main(["run", "--workload", "gears", "--frames", "30", "--seed", "2", "--driver-seed", "8"]) == 0
        second = kv(capsys.readouterr().out)
        assert first["fb_hash"] == second["fb_hash"]
        assert first["log_len"] == str(1 + 30 * 4)

    def test_ckpt_restore_round_trip(self, tmp_path, capsys):
        img = str(tmp_path / "g.ckpt")
        assert cli.main(["ckpt", "--image", img, "--frames", "40"]) == 0
        saved = kv(capsys.readouterr().out)
        assert cli.main(["restore", "--image", img, "--driver-seed", "7"]) == 0
        back = kv(capsys.readouterr().out)
        assert saved["fb_hash"] == back["fb_hash"]
        assert back["epoch"] == "1" and back["windows"] == "1"
        assert back["window_1_hash"] == back["fb_hash"]

    def test_ckpt_pruned(self, tmp_path, capsys):
        img = str(tmp_path / "p.ckpt")
        assert cli.main(["ckpt", "--image", img, "--frames", "40", "--prune"]) == 0
        out = kv(capsys.readouterr().out)
        assert int(out["pruned_len"]) < int(out["log_len"])

    def test_resume_then_continue(self, tmp_path, capsys):
        img = str(tmp_path / "r.ckpt")
        cli.main(["ckpt", "--image", img, "--workload", "random", "--frames", "50", "--seed", "4"])
        capsys.readouterr()
        cli.main(["run", "--image", img, "--frames", "25", "--driver-seed", "3"])
        resumed = kv(capsys.readouterr().out)
        cli.main(["run", "--workload", "random", "--frames", "75", "--seed", "4"])
        straight = kv(capsys.readouterr().out)
        assert resumed["fb_hash"] == straight["fb_hash"]
        assert resumed["frames"] == "75"

    def test_headless(self, tmp_path, capsys):
        img = str(tmp_path / "h.ckpt")
        assert cli.main(["ckpt", "--image", img, "--display", "", "--frames", "5"]) == 0
        capsys.readouterr()
        assert cli.main(["restore", "--image", img, "--display", ""]) == 0
        assert kv(capsys.readouterr().out)["windows"] == "0"

    def test_verify(self, capsys):
        assert cli.main(["verify", "--seed", "1", "--cases", "3"]) == 0
        out = kv(capsys.readouterr().out)
        assert out["failed"] == "0"
        assert out["transparency"] == "pass" and out["raster_oracle"] == "pass"

    def test_usage_errors(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["run", "--bogus"])
        assert exc.value.code == 2
        assert cli.main(["bench", "overhead", "--repeat", "2"]) == 2
        assert "--repeat" in capsys.readouterr().err

    def test_missing_image(self, tmp_path, capsys):
        assert cli.main(["restore", "--image", str(tmp_path / "nope")]) == 1
        assert "error" in capsys.readouterr().err

    def test_corrupt_image(self, tmp_path, capsys):
        img = tmp_path / "c.ckpt"
        cli.main(["ckpt", "--image", str(img), "--frames", "5"])
        data = bytearray(img.read_bytes())
        data[40] ^= 0xFF
        img.write_bytes(bytes(data))
        assert cli.main(["restore", "--image", str(img)]) == 1
        assert "checksum" in capsys.readouterr().err

    def test_bench_overhead_cli(self, capsys):
        assert cli.main(["bench", "overhead", "--frames", "100", "--repeat", "3"]) == 0
        out = kv(capsys.readouterr().out)
        assert float(out["overhead_ratio"]) > -1

    def test_console_script(self):
        proc = subprocess.run([sys.executable, "-m", "glckpt.cli", "run", "--frames", "10"],
                              capture_output=True, text=True, check=False)
        assert proc.returncode == 0, proc.stderr
        assert len(kv(proc.stdout)["fb_hash"]) == 16
        proc = subprocess.run([sys.executable, "-m", "glckpt.cli", "--nope"],
                              capture_output=True, text=True, check=False)
        assert proc.returncode == 2
