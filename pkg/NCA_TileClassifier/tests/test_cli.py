import pytest

from app import cli
from app.services import quantizer, trainer

FAST_TRAIN = ["--iterations", "2", "--batch-size", "4"]


@pytest.fixture
def weights(tmp_path):
    path = tmp_path / "w.bin"
    assert cli.main(["train", "--seed", "3", "--iterations", "0", "--out", str(path)]) == 0
    return path


def test_train_zero_iterations_writes_init_params(tmp_path, capsys):
    path = tmp_path / "w.bin"
    assert cli.main(["train", "--seed", "3", "--iterations", "0", "--out", str(path)]) == 0
    params, _ = quantizer.load_weights(path)
    assert params.equals(trainer.init_params(3))
    out = capsys.readouterr().out
    assert "classified=" in out and f"wrote {path}" in out


def test_train_is_byte_reproducible(tmp_path):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    assert cli.main(["train", "--seed", "7", *FAST_TRAIN, "--out", str(a)]) == 0
    assert cli.main(["train", "--seed", "7", *FAST_TRAIN, "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_train_reports_io_failure(tmp_path, capsys):
    out = tmp_path / "missing-dir" / "w.bin"
    assert cli.main(["train", "--iterations", "0", "--out", str(out)]) == cli.EXIT_IO
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error kind=FileNotFoundError")


@pytest.mark.parametrize("mode", ["sync", "listing1", "firmware"])
def test_simulate_prints_report_and_panels(weights, capsys, mode):
    assert cli.main(["simulate", str(weights), "canonical:4", mode, "--seed", "1"]) == 0
    out = capsys.readouterr().out
    assert out.startswith(f"# mode={mode} label=4 width=4 height=5")
    assert "update 30" in out


def test_simulate_mode_flag_and_report_file(weights, tmp_path, capsys):
    report = tmp_path / "run.txt"
    assert cli.main(["simulate", str(weights), "down:7", "--mode", "listing1", "--report-out", str(report)]) == 0
    assert report.read_text(encoding="utf-8").startswith("# mode=listing1 label=7 width=3 height=4")
    assert cli.main(["render", str(report)]) == 0
    assert "update 1" in capsys.readouterr().out


def test_simulate_unknown_shape(weights, capsys):
    assert cli.main(["simulate", str(weights), "missing:99", "firmware", "--seed", "1"]) == cli.EXIT_USAGE
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    assert "kind=ShapeRefError" in err[0] and "canonical:0" in err[0]


def test_simulate_bad_weight_file(tmp_path, capsys):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"XXXXXXXX" + bytes(100))
    assert cli.main(["simulate", str(bad), "canonical:1"]) == cli.EXIT_FORMAT
    assert "kind=WeightFormatError" in capsys.readouterr().err


def test_simulate_shape_file(weights, tmp_path, capsys):
    shape_file = tmp_path / "l.txt"
    shape_file.write_text("label 4\n#.\n##\n", encoding="utf-8")
    assert cli.main(["simulate", str(weights), str(shape_file), "sync", "--max-updates", "3"]) == 0
    assert "update 3" in capsys.readouterr().out


def test_simulate_rejects_bad_loss_rate(weights, capsys):
    assert cli.main(["simulate", str(weights), "canonical:1", "--loss-rate", "2"]) == cli.EXIT_USAGE


def test_experiment_summary(weights, tmp_path, capsys):
    report_dir = tmp_path / "runs"
    argv = ["experiment", "scaled_down", str(weights), "--seed", "1", "--seed", "2", "--report-dir", str(report_dir)]
    assert cli.main(argv) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[-1].startswith("catalog=scaled_down mode=firmware success=")
    assert len(lines) == 1 + 5 * 2 + 1
    assert len(list(report_dir.iterdir())) == 10


def test_export_is_stable(weights, tmp_path):
    a, b = tmp_path / "a.h", tmp_path / "b.h"
    assert cli.main(["export", str(weights), "--out", str(a)]) == 0
    assert cli.main(["export", str(weights), "--out", str(b)]) == 0
    text = a.read_text(encoding="utf-8")
    assert text == b.read_text(encoding="utf-8")
    assert "parameter count: 10101" in text
    assert text.count("const float ") == 6 + 2


def test_render_shape_ref(capsys):
    assert cli.main(["render", "canonical:7"]) == 0
    assert capsys.readouterr().out == "####\n...#\n..##\n..#.\n..#.\n"


def test_render_rejects_tile_outside_grid(tmp_path, capsys):
    report = tmp_path / "bad.txt"
    report.write_text("# mode=firmware label=1 width=2 height=2 convergence=-\n1 5 0 1\n", encoding="utf-8")
    assert cli.main(["render", str(report)]) == cli.EXIT_FORMAT
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error kind=FormatError")


def test_simulate_rejects_jitter_beyond_period(weights, capsys):
    argv = ["simulate", str(weights), "canonical:1", "--timeout-ms", "100", "--jitter-ms", "100"]
    assert cli.main(argv) == cli.EXIT_USAGE
    assert "kind=ValidationError" in capsys.readouterr().err
