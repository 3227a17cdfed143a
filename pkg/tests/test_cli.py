import csv
import json
import shutil
from pathlib import Path

import pytest

from oecpipe.cli import main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def encoded(tmp_path):
    out = tmp_path / "out"
    code = run("codec", "encode", "--model", "S", "--tile-dim", 128, "--width", 256,
               "--height", 160, "--seed", 3, "--out", out)
    assert code == 0
    return out


class TestCodec:
    def test_round_trip_digests(self, encoded):
        assert run("codec", "decode", "--model", "S", "--tile-dim", 128, "--seed", 3, "--out", encoded) == 0
        enc = read_csv(encoded / "codec_summary.csv")
        dec = read_csv(encoded / "decode_summary.csv")
        assert len(enc) == 4 == len(list((encoded / "tiles").glob("*.fcf")))
        by_pos = {(r["row"], r["col"]): r["latent_sha256"] for r in enc}
        for r in dec:
            assert r["status"] == "ok"
            assert by_pos[(r["row"], r["col"])] == r["latent_sha256"]

    def test_estimate_close_to_actual(self, tmp_path):
        out = tmp_path / "o"
        assert run("codec", "encode", "--model", "M", "--out", out, "--width", 512, "--height", 512) == 0
        (row,) = read_csv(out / "codec_summary.csv")
        # header and two stream finals are the only non-entropy bytes
        assert float(row["bpp"]) == pytest.approx(float(row["estimate_bpp"]), rel=0.01)

    def test_corrupt_file_reported(self, encoded, capsys):
        victim = sorted((encoded / "tiles").glob("*.fcf"))[1]
        blob = bytearray(victim.read_bytes())
        blob[60] ^= 0x10
        victim.write_bytes(bytes(blob))
        capsys.readouterr()
        assert run("codec", "decode", "--model", "S", "--tile-dim", 128, "--seed", 3, "--out", encoded) == 1
        assert "CRC mismatch" in capsys.readouterr().err
        statuses = [r["status"] for r in read_csv(encoded / "decode_summary.csv")]
        assert statuses.count("ok") == 3

    def test_wrong_model_rejected(self, encoded, capsys):
        assert run("codec", "decode", "--model", "M", "--tile-dim", 128, "--seed", 3, "--out", encoded) == 1
        assert "coded with prior" in capsys.readouterr().err

    def test_missing_action(self, tmp_path, capsys):
        assert run("codec", "--out", tmp_path) == 2
        assert "--action is required" in capsys.readouterr().err

    def test_no_files(self, tmp_path):
        assert run("codec", "decode", "--out", tmp_path) == 2


class TestProfileAndMission:
    def test_profile_selects_one_per_device(self, tmp_path):
        assert run("profile", "--devices", CONFIGS / "devices.json", "--out", tmp_path) == 0
        rows = read_csv(tmp_path / "profile.csv")
        selected = [r for r in rows if r["selected"] == "1"]
        assert sorted(r["device"] for r in selected) == ["orin-agx", "orin-nano"]
        # the 2x2 L grouping does not fit the nano's memory budget
        nano = [r for r in rows if r["device"] == "orin-nano"]
        best_fit = max((r for r in nano if int(r["memory_B"]) <= 6_000_000_000),
                       key=lambda r: float(r["tcr_per_s"]))
        assert best_fit["selected"] == "1"

    def test_empty_grid_is_an_error(self, tmp_path, capsys):
        devices = {"devices": [{"device_id": "d", "avg_processing_power": 5, "transmit_power": 5,
                                "candidates": []}]}
        path = tmp_path / "d.json"
        path.write_text(json.dumps(devices))
        assert run("profile", "--devices", path, "--out", tmp_path) == 2
        assert "empty candidate grid" in capsys.readouterr().err

    def test_mission_from_profile(self, tmp_path):
        assert run("profile", "--devices", CONFIGS / "devices.json", "--out", tmp_path) == 0
        assert run("mission", "--missions", CONFIGS / "missions.json", "--devices", CONFIGS / "devices.json",
                   "--profile", tmp_path / "profile.csv", "--bpp", 0.24, "--out", tmp_path) == 0
        rows = read_csv(tmp_path / "mission_report.csv")
        assert len(rows) == 8
        wv = [r for r in rows if r["mission"] == "WorldView-3"]
        for r in wv:
            assert float(r["raw_equiv_B"]) == 100 * float(r["capacity_B"]) == 9.0e12

    def test_bent_pipe_saves_nothing(self, tmp_path):
        assert run("mission", "--missions", CONFIGS / "missions.json", "--devices", CONFIGS / "devices.json",
                   "--bpp", 24, "--out", tmp_path) == 0
        for r in read_csv(tmp_path / "mission_report.csv"):
            assert float(r["E_tx_saved_J"]) == 0.0
            assert r["raw_equiv_B"] == r["capacity_B"]
            assert r["E_double_J"] == "nan"


class TestSchedule:
    def test_fallback_only_at_large_window(self, tmp_path):
        assert run("schedule", "--graph", CONFIGS / "graph_7op.json", "--workload", CONFIGS / "workload.json",
                   "--ws", 4, "--requests", 20, "--out", tmp_path) == 0
        parts = read_csv(tmp_path / "partition.csv")
        assert [(p["kind"], p["processors"], p["ops"]) for p in parts] == [("unit", "CPU", "0 1 2 3 4 5 6")]
        procs = {r["processor"]: r for r in read_csv(tmp_path / "processors.csv")}
        assert procs["GPU"]["assignments"] == "0"
        assert int(procs["CPU"]["assignments"]) == 20

    def test_window_one_uses_gpu(self, tmp_path):
        assert run("schedule", "--config", CONFIGS / "run.json", "--requests", 30, "--out", tmp_path) == 0
        parts = read_csv(tmp_path / "partition.csv")
        kinds = [p["kind"] for p in parts]
        assert "merged" in kinds
        rows = read_csv(tmp_path / "schedule.csv")
        assert {r["task_id"] for r in rows} == {str(i) for i in range(30)}
        procs = {r["processor"]: r for r in read_csv(tmp_path / "processors.csv")}
        assert int(procs["GPU"]["assignments"]) > 0

    def test_hot_processor_not_assigned(self, tmp_path):
        work = json.loads((CONFIGS / "workload.json").read_text())
        work["processors"][0]["temperature"] = 95.0
        work["processors"][0]["cool_rate"] = 0.0
        path = tmp_path / "w.json"
        path.write_text(json.dumps(work))
        assert run("schedule", "--graph", CONFIGS / "graph_7op.json", "--workload", path,
                   "--requests", 25, "--out", tmp_path) == 0
        procs = {r["processor"]: r for r in read_csv(tmp_path / "processors.csv")}
        assert procs["GPU"]["assignments"] == "0"

    def test_seed_reproducible(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run("schedule", "--config", CONFIGS / "run.json", "--seed", 5, "--requests", 40, "--out", out) == 0
        assert (a / "schedule.csv").read_text() == (b / "schedule.csv").read_text()


class TestPipeline:
    def test_short_run(self, tmp_path, capsys):
        assert run("pipeline", "--model", "S", "--tile-dim", 128, "--duration", 0.5, "--workers", 2,
                   "--rate", 20, "--out", tmp_path) == 0
        (row,) = read_csv(tmp_path / "pipeline_metrics.csv")
        assert row["role"] == "baseline" and int(row["produced"]) > 0
        assert "tcr_decrease_percent 0.000" in capsys.readouterr().out


class TestConfigFile:
    def test_relative_paths_resolve(self, tmp_path):
        cfg_dir = tmp_path / "cfg"
        shutil.copytree(CONFIGS, cfg_dir)
        assert run("profile", "--config", cfg_dir / "run.json", "--out", tmp_path / "o") == 0
        assert (tmp_path / "o" / "profile.csv").exists()

    def test_bad_json(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        assert run("profile", "--config", path, "--out", tmp_path) == 2
        assert "error" in capsys.readouterr().err
