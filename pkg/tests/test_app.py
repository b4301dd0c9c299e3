import json

import pytest

from voxmamba.app import main
from voxmamba.metrics.seg import read_report
from voxmamba.volumes.dataset import MANIFEST


@pytest.fixture(autouse=True)
def isolated(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("VOXMAMBA_OUTPUT_DIR", str(tmp_path / "runs"))
    monkeypatch.delenv("VOXMAMBA_THREADS", raising=False)
    monkeypatch.delenv("VOXMAMBA_SCAN_CHUNK", raising=False)


def gen(out, *extra):
    return main(["gen", "--task", "blobs", "--dims", "8", "--n", "4", "--seed", "1", "--out", str(out), *extra])


def write_config(path, dataset, **overrides):
    config = {
        "variant": "segmamba",
        "stages": 2,
        "widths": [2, 4],
        "crop": [8, 8, 8],
        "classes": 3,
        "epochs": 2,
        "batch_size": 2,
        "seed": 0,
        "dataset": str(dataset),
        "optimizer": {"lr": 1e-3},
    }
    config.update(overrides)
    path.write_text(json.dumps(config))
    return path


def test_gen_writes_manifest_and_splits(tmp_path, capsys):
    assert gen(tmp_path / "ds") == 0
    manifest = json.loads((tmp_path / "ds" / MANIFEST).read_text())
    assert [len(manifest["splits"][s]) for s in ("train", "val", "test")] == [2, 1, 1]
    assert "✅" in capsys.readouterr().out


def test_gen_rerun_is_byte_identical(tmp_path):
    gen(tmp_path / "a")
    gen(tmp_path / "b")
    first = json.loads((tmp_path / "a" / MANIFEST).read_text())["checksums"]
    second = json.loads((tmp_path / "b" / MANIFEST).read_text())["checksums"]
    assert first == second


def test_gen_rejects_tiny_volumes(tmp_path, capsys):
    assert main(["gen", "--dims", "4", "--out", str(tmp_path / "ds")]) == 2
    assert "ConfigurationError" in capsys.readouterr().out
    assert not (tmp_path / "ds").exists()


def test_gen_default_output_follows_environment(tmp_path):
    assert main(["gen", "--dims", "8", "--n", "1"]) == 0
    assert (tmp_path / "runs" / "datasets" / "blobs" / MANIFEST).exists()


def test_train_then_eval(tmp_path, capsys):
    gen(tmp_path / "ds")
    config = write_config(tmp_path / "run.json", tmp_path / "ds")
    run_dir = tmp_path / "run"
    assert main(["train", str(config), "--out", str(run_dir)]) == 0
    assert (run_dir / "best.ckpt").exists() and (run_dir / "last.ckpt").exists()
    assert len((run_dir / "train_log.jsonl").read_text().splitlines()) == 2
    assert json.loads((run_dir / "config.json").read_text())["variant"] == "segmamba"

    assert main(["eval", str(run_dir / "best.ckpt"), "--split", "test"]) == 0
    report = read_report(run_dir / "report_test.json")
    assert [c.label for c in report.per_class] == [1, 2]
    assert 0.0 <= report.mean_dice <= 1.0
    out = capsys.readouterr().out
    assert "DSC" in out and "HD95" in out

    assert main(["show", str(run_dir)]) == 0
    out = capsys.readouterr().out
    assert "Époque" in out
    assert "en 2 époques" in out


def test_training_log_is_reproducible(tmp_path):
    gen(tmp_path / "ds")
    config = write_config(tmp_path / "run.json", tmp_path / "ds", variant="pansegmamba")
    main(["train", str(config), "--out", str(tmp_path / "a")])
    main(["train", str(config), "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "train_log.jsonl").read_text() == (tmp_path / "b" / "train_log.jsonl").read_text()


def test_invalid_config_writes_nothing(tmp_path):
    gen(tmp_path / "ds")
    config = write_config(tmp_path / "run.json", tmp_path / "ds", widths=[4, 4])
    assert main(["train", str(config), "--out", str(tmp_path / "run")]) == 2
    assert not (tmp_path / "run").exists()

    config = write_config(tmp_path / "run.json", tmp_path / "ds", depth=3)
    assert main(["train", str(config), "--out", str(tmp_path / "run")]) == 2
    assert not (tmp_path / "run").exists()


def test_crop_must_match_the_dataset(tmp_path):
    gen(tmp_path / "ds")
    config = write_config(tmp_path / "run.json", tmp_path / "ds", crop=[16, 16, 16])
    assert main(["train", str(config), "--out", str(tmp_path / "run")]) == 2


def test_missing_files_exit_with_io_code(tmp_path):
    assert main(["train", str(tmp_path / "absent.json")]) == 4
    assert main(["eval", str(tmp_path / "absent.ckpt")]) == 4


def test_corrupt_checkpoint_is_a_format_error(tmp_path):
    (tmp_path / "bad.ckpt").write_bytes(b"VXCK\x01")
    assert main(["eval", str(tmp_path / "bad.ckpt")]) == 4


def test_bench_small_lengths(tmp_path, capsys):
    out = tmp_path / "bench.json"
    assert main(["bench", "--min-exp", "6", "--max-exp", "8", "--repeats", "2", "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert [row["length"] for row in report["rows"]] == [64, 128, 256]
    assert "R²" in capsys.readouterr().out


def test_bench_rejects_inverted_range():
    assert main(["bench", "--min-exp", "9", "--max-exp", "8"]) == 2


def test_params_and_presets(capsys):
    assert main(["params", "--widths", "4", "8", "--crop", "8"]) == 0
    out = capsys.readouterr().out
    for name in ("baseline", "segmamba", "segmambaskip", "pansegmamba", "multisegmamba"):
        assert name in out
    assert "GFLOPs" in out
    assert main(["presets"]) == 0
    out = capsys.readouterr().out
    assert "acdc" in out and "6.35" in out


def test_show_unknown_run(tmp_path):
    assert main(["show", str(tmp_path / "nowhere")]) == 2


@pytest.mark.slow
def test_baseline_learns_blobs_from_the_command_line(tmp_path):
    dataset = tmp_path / "blobs32"
    assert main(["gen", "--task", "blobs", "--dims", "32", "--n", "20", "--noise", "0.05", "--out", str(dataset)]) == 0
    config = write_config(
        tmp_path / "run.json",
        dataset,
        variant="baseline",
        stages=4,
        widths=[16, 32, 64, 128],
        crop=[32, 32, 32],
        epochs=20,
    )
    run_dir = tmp_path / "run"
    assert main(["train", str(config), "--out", str(run_dir)]) == 0
    entries = [json.loads(line) for line in (run_dir / "train_log.jsonl").read_text().splitlines()]
    assert len(entries) == 20
    assert max(entry["val_dice"] for entry in entries) >= 0.95
