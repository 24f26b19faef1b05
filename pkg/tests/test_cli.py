from __future__ import annotations

import numpy as np
import pytest

from src import cli
from src.config import get_settings
from src.errors import ConfigError
from src.ingestion.importer import load_pgm, load_ppm, save_pgm
from src.ingestion.snapshots import read_snapshot


def _stats(out: str) -> dict[str, str]:
    return dict(item.split("=", 1) for line in out.splitlines() for item in line.split() if "=" in item)


@pytest.fixture(scope="module")
def small_bundle_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("bundle")
    assert cli.main(["synth", "--seed", "3", "--resolution", "32", "--cameras", "3", "--out", str(path)]) == 0
    return path


def test_synth_is_reproducible(tmp_path, capsys):
    args = ["synth", "--seed", "3", "--resolution", "32", "--cameras", "3", "--out"]
    assert cli.main(args + [str(tmp_path / "a")]) == 0
    assert cli.main(args + [str(tmp_path / "b")]) == 0
    first, second = capsys.readouterr().out.strip().splitlines()
    assert first == second
    assert _stats(first)["views"] == "3"
    for rel in ("manifest.json", "images/view_000.ppm", "labels/view_001.pgm", "depth/view_002.pgm"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_eval_identical_maps(tmp_path, capsys, rng):
    labels = rng.integers(0, 4, size=(8, 8)).astype(np.uint8)
    save_pgm(tmp_path / "gt.pgm", labels)
    save_pgm(tmp_path / "pred.pgm", labels)
    code = cli.main(
        [
            "eval", "--gt", str(tmp_path / "gt.pgm"), "--pred", str(tmp_path / "pred.pgm"), "--classes", "4",
            "--csv", str(tmp_path / "report.csv"), "--html", str(tmp_path / "report.html"),
        ]
    )
    assert code == 0
    stats = _stats(capsys.readouterr().out)
    assert float(stats["miou"]) == 1.0 and float(stats["acc"]) == 1.0
    assert stats["pixels"] == "64"
    assert (tmp_path / "report.csv").read_text().startswith("class,iou")
    assert "Rapport de segmentation" in (tmp_path / "report.html").read_text()


def test_eval_label_out_of_range(tmp_path):
    save_pgm(tmp_path / "gt.pgm", np.full((2, 2), 9, dtype=np.uint8))
    assert cli.main(["eval", "--gt", str(tmp_path / "gt.pgm"), "--pred", str(tmp_path / "gt.pgm"), "--classes", "4"]) == 1


@pytest.mark.parametrize(
    "argv",
    [[], ["synth", "--bogus"], ["render", "--bundle", "x"], ["eval", "--classes", "three", "--gt", "a", "--pred", "b"]],
)
def test_usage_errors_exit_with_one(argv):
    assert cli.main(argv) == 1


@pytest.mark.parametrize("name, value", [("SEMSPLAT_THREADS", "many"), ("LOG_LEVEL", "LOUD")])
def test_bad_environment_exits_with_one(monkeypatch, name, value):
    monkeypatch.setenv(name, value)
    assert cli.main(["gradcheck"]) == 1


def test_log_level_is_normalized(monkeypatch):
    monkeypatch.setenv("LOG_LEVEL", " debug ")
    assert get_settings().log_level == "DEBUG"
    monkeypatch.setenv("LOG_LEVEL", "verbose")
    with pytest.raises(ConfigError):
        get_settings()


def test_missing_bundle_exits_with_one(tmp_path):
    argv = ["render", "--bundle", str(tmp_path), "--inputs", "0,1", "--target", "2", "--out", str(tmp_path / "r")]
    assert cli.main(argv) == 1


def test_raw_depth_command(small_bundle_dir, tmp_path, capsys):
    code = cli.main(
        ["depth", "--bundle", str(small_bundle_dir), "--raw-features", "--candidates", "16", "--out", str(tmp_path)]
    )
    assert code == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 3
    assert all("abs_rel=" in line for line in lines)
    assert load_pgm(tmp_path / "view_000_depth.pgm").shape == (32, 32)


def test_learned_depth_command(small_bundle_dir, tmp_path, capsys):
    argv = ["depth", "--bundle", str(small_bundle_dir), "--views", "0,1", "--d", "16", "--candidates", "8",
            "--out", str(tmp_path)]
    assert cli.main(argv) == 0
    assert len(capsys.readouterr().out.strip().splitlines()) == 2


def test_render_command(small_bundle_dir, tmp_path, capsys):
    prefix = tmp_path / "out" / "novel"
    argv = ["--threads", "2", "render", "--bundle", str(small_bundle_dir), "--inputs", "0,2", "--target", "1",
            "--d", "16", "--candidates", "8", "--out", str(prefix)]
    assert cli.main(argv) == 0
    stats = _stats(capsys.readouterr().out)
    assert stats["gaussians"] == str(2 * 32 * 32)
    assert (stats["width"], stats["height"]) == ("32", "32")
    assert load_ppm(f"{prefix}_rgb.ppm").shape == (32, 32, 3)
    assert load_pgm(f"{prefix}_labels.pgm").dtype == np.uint8
    blocks, meta = read_snapshot(f"{prefix}_probs")
    assert blocks["sem_probs"].shape == (6, 32, 32)
    assert meta["kind"] == "render"


def test_render_with_explicit_pose(small_bundle_dir, tmp_path, capsys):
    argv = ["render", "--bundle", str(small_bundle_dir), "--inputs", "0,1", "--pose", "1,0,0,0,0,0,2.5",
            "--d", "16", "--candidates", "8", "--out", str(tmp_path / "posed")]
    assert cli.main(argv) == 0
    assert "gaussians=2048" in capsys.readouterr().out


@pytest.mark.slow
def test_render_default_resolution(tmp_path, capsys):
    assert cli.main(["synth", "--seed", "1", "--out", str(tmp_path / "room")]) == 0
    argv = ["render", "--bundle", str(tmp_path / "room"), "--inputs", "0,2", "--target", "1",
            "--candidates", "16", "--out", str(tmp_path / "novel")]
    assert cli.main(argv) == 0
    assert _stats(capsys.readouterr().out.splitlines()[-1])["gaussians"] == "8192"


def test_gradcheck_command(capsys):
    assert cli.main(["gradcheck"]) == 0
    stats = _stats(capsys.readouterr().out)
    assert float(stats["max_rel_err"]) <= 1e-4
    assert "fit_objective" in stats


def test_selftest_runs_pytest(monkeypatch, capsys):
    calls = []

    def fake_main(args):
        calls.append(args)
        return 0

    monkeypatch.setattr(pytest, "main", fake_main)
    assert cli.main(["selftest", "-k", "metrics"]) == 0
    assert calls[0][-2:] == ["-k", "metrics"]
    monkeypatch.setattr(pytest, "main", lambda args: 1)
    assert cli.main(["selftest"]) == 1
