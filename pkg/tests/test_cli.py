"""CLI behavior: outputs, exit codes, determinism, artifact files."""

import json

import numpy as np
import pytest

from repdet.cli import main
from repdet.config import ModelConfig
from repdet.image_io import Image, read_ppm, write_ppm
from repdet.model import build_model
from repdet.weights import WeightStore, load_weights, save_weights

CONF = """\
model.input_h = 64
model.input_w = 64
model.width = 0.25
export.score_thresh = 0.2
"""


@pytest.fixture()
def workdir(tmp_path):
    conf = tmp_path / "small.conf"
    conf.write_text(CONF)
    r = np.random.default_rng(0)
    img = tmp_path / "x.ppm"
    write_ppm(Image(r.integers(0, 256, (48, 64, 3), dtype=np.uint8)), str(img))
    return tmp_path


def zero_store_path(tmp_path):
    cfg = ModelConfig(width_mult=0.25, input_size=(64, 64))
    model = build_model(cfg)
    entries = {
        name: np.full(
            shape, 1.0 if name.endswith(".running_var") else 0.0, np.float32
        )
        for name, shape in model.weight_spec()
    }
    p = tmp_path / "zero.rdw"
    save_weights(WeightStore(entries), str(p))
    return p


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestPredict:
    def test_stdout_json_lines(self, workdir, capsys):
        code, out, _ = run(
            capsys,
            "predict",
            "--config", str(workdir / "small.conf"),
            "--random-weights",
            "--images", str(workdir / "x.ppm"),
        )
        assert code == 0
        rec = json.loads(out.strip())
        assert rec["image"].endswith("x.ppm")
        for d in rec["detections"]:
            assert set(d) == {"class", "score", "box"}
            assert len(d["box"]) == 4

    def test_zero_weights_high_threshold_empty(self, workdir, capsys):
        zp = zero_store_path(workdir)
        code, out, _ = run(
            capsys,
            "predict",
            "--config", str(workdir / "small.conf"),
            "--set", "export.score_thresh=0.5",
            "--weights", str(zp),
            "--images", str(workdir / "x.ppm"),
        )
        assert code == 0
        assert json.loads(out.strip())["detections"] == []

    def test_byte_identical_runs(self, workdir, capsys):
        argv = (
            "predict",
            "--config", str(workdir / "small.conf"),
            "--random-weights",
            "--threads", "1",
            "--images", str(workdir / "x.ppm"),
        )
        _, out1, _ = run(capsys, *argv)
        _, out2, _ = run(capsys, *argv)
        assert out1.encode() == out2.encode()

    def test_out_directory_artifacts(self, workdir, capsys):
        out_dir = workdir / "results"
        code, _, _ = run(
            capsys,
            "predict",
            "--config", str(workdir / "small.conf"),
            "--random-weights",
            "--images", str(workdir / "x.ppm"),
            "--out", str(out_dir),
        )
        assert code == 0
        jsonl = out_dir / "detections.jsonl"
        assert jsonl.is_file()
        rec = json.loads(jsonl.read_text().strip())
        assert rec["image"].endswith("x.ppm")
        annotated = out_dir / "x_annotated.ppm"
        assert annotated.is_file()
        img = read_ppm(str(annotated))
        assert (img.h, img.w) == (48, 64)
        # nothing written outside --out
        made = {p.name for p in workdir.iterdir()}
        assert made == {"small.conf", "x.ppm", "zero.rdw", "results"} - (
            set() if (workdir / "zero.rdw").exists() else {"zero.rdw"}
        )

    def test_missing_weights_exit_2(self, workdir, capsys):
        code, _, err = run(
            capsys,
            "predict",
            "--config", str(workdir / "small.conf"),
            "--weights", str(workdir / "missing.rdw"),
            "--images", str(workdir / "x.ppm"),
        )
        assert code == 2
        assert "missing.rdw" in err

    def test_no_weight_source_exit_3(self, workdir, capsys):
        code, _, err = run(
            capsys,
            "predict",
            "--config", str(workdir / "small.conf"),
            "--images", str(workdir / "x.ppm"),
        )
        assert code == 3
        assert "weights" in err

    def test_bad_image_exit_2(self, workdir, capsys):
        bad = workdir / "bad.ppm"
        bad.write_bytes(b"P5\n1 1\n255\n\0")
        code, _, err = run(
            capsys,
            "predict",
            "--config", str(workdir / "small.conf"),
            "--random-weights",
            "--images", str(bad),
        )
        assert code == 2
        assert "bad.ppm" in err


class TestConfigErrors:
    def test_malformed_config_exit_3(self, workdir, capsys):
        bad = workdir / "bad.conf"
        bad.write_text("model.nope = 1\n")
        code, _, err = run(capsys, "inspect", "--config", str(bad))
        assert code == 3
        assert "line 1" in err

    def test_bad_override_exit_3(self, workdir, capsys):
        code, _, err = run(
            capsys,
            "inspect",
            "--config", str(workdir / "small.conf"),
            "--set", "head.tood_stack=9",
        )
        assert code == 3
        assert "[2,6]" in err

    def test_missing_config_file_exit_2(self, workdir, capsys):
        code, _, err = run(
            capsys, "inspect", "--config", str(workdir / "absent.conf")
        )
        assert code == 2
        assert "absent.conf" in err


class TestBench:
    def test_grid_rows_and_artifacts(self, workdir, capsys):
        out_dir = workdir / "bench"
        code, out, _ = run(
            capsys,
            "bench",
            "--config", str(workdir / "small.conf"),
            "--random-weights",
            "--iters", "1",
            "--warmup", "0",
            "--out", str(out_dir),
        )
        assert code == 0
        table_lines = [
            ln for ln in out.splitlines() if ln and not ln.startswith("wrote")
        ]
        assert len(table_lines) == 2 + 8  # header + rule + 8 configs
        for name in ("bench.json", "bench.csv", "bench.png"):
            assert (out_dir / name).is_file()
        payload = json.loads((out_dir / "bench.json").read_text())
        assert len(payload["configs"]) == 8
        assert (out_dir / "bench.png").read_bytes()[:8].startswith(b"\x89PNG")

    def test_table_and_json_agree(self, workdir, capsys):
        out_dir = workdir / "bench2"
        _, out, _ = run(
            capsys,
            "bench",
            "--config", str(workdir / "small.conf"),
            "--random-weights",
            "--iters", "2",
            "--warmup", "0",
            "--out", str(out_dir),
        )
        payload = json.loads((out_dir / "bench.json").read_text())
        rows = [
            ln.split()
            for ln in out.splitlines()
            if ln.startswith(("false", "true"))
        ]
        assert len(rows) == 8
        for cells, cfg in zip(rows, payload["configs"]):
            assert cells[0] == str(cfg["fuse_reparam"]).lower()
            assert cells[1] == str(cfg["fuse_preprocess"]).lower()
            assert cells[2] == cfg["nms_mode"]
            for cell, stage in zip(
                cells[3:],
                ("preprocess_ms", "inference_ms", "postprocess_ms", "end2end_ms"),
            ):
                assert float(cell) == cfg["stages_ms"][stage]["median"]

    def test_csv_matches_json(self, workdir, capsys):
        import csv

        out_dir = workdir / "bench3"
        run(
            capsys,
            "bench",
            "--config", str(workdir / "small.conf"),
            "--random-weights",
            "--iters", "1",
            "--warmup", "0",
            "--out", str(out_dir),
        )
        payload = json.loads((out_dir / "bench.json").read_text())
        with open(out_dir / "bench.csv") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 8
        for row, cfg in zip(rows, payload["configs"]):
            assert row["nms_mode"] == cfg["nms_mode"]
            assert (
                float(row["inference_ms.median"])
                == cfg["stages_ms"]["inference_ms"]["median"]
            )


class TestFuse:
    def test_fuse_and_refuse(self, workdir, capsys):
        fused = workdir / "fused.rdw"
        code, out, _ = run(
            capsys,
            "fuse",
            "--config", str(workdir / "small.conf"),
            "--random-weights",
            "--out", str(fused),
        )
        assert code == 0
        assert "params before" in out and "params after" in out
        assert fused.is_file()
        load_weights(str(fused))  # valid store
        code, out, _ = run(
            capsys,
            "fuse",
            "--config", str(workdir / "small.conf"),
            "--weights", str(fused),
            "--out", str(workdir / "fused2.rdw"),
        )
        assert code == 0
        assert "no fusable nodes" in out


class TestInspect:
    def test_prints_sections(self, workdir, capsys):
        code, out, _ = run(
            capsys, "inspect", "--config", str(workdir / "small.conf")
        )
        assert code == 0
        for word in ("backbone", "neck", "head", "total", "deploy"):
            assert word in out

    def test_artifacts(self, workdir, capsys):
        out_dir = workdir / "cost"
        code, _, _ = run(
            capsys,
            "inspect",
            "--config", str(workdir / "small.conf"),
            "--out", str(out_dir),
        )
        assert code == 0
        for name in ("cost.json", "cost.csv", "cost.png"):
            assert (out_dir / name).is_file()
        payload = json.loads((out_dir / "cost.json").read_text())
        total = payload["totals"]["params"]
        assert total == sum(
            s["params"] for s in payload["sections"].values()
        )

    def test_fused_config_reports_fused_params(self, workdir, capsys):
        _, out_raw, _ = run(
            capsys, "inspect", "--config", str(workdir / "small.conf")
        )
        _, out_fused, _ = run(
            capsys,
            "inspect",
            "--config", str(workdir / "small.conf"),
            "--set", "export.fuse_reparam=true",
        )

        def total_params(text):
            for ln in text.splitlines():
                if ln.startswith("total"):
                    return int(ln.split()[1].replace(",", ""))
            raise AssertionError("no total row")

        assert total_params(out_fused) < total_params(out_raw)


class TestSelftest:
    def test_exit_zero(self, capsys):
        code, out, _ = run(capsys, "selftest")
        assert code == 0
        assert "checks passed" in out
