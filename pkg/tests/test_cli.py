import json
import subprocess
import sys

import pytest

from crossview.cli import main

FIXTURE_CONFIG = """\
train_manifest = d/manifest.csv
eval_manifest = e/manifest.csv
epochs = 2
batch_size = 4
channels = 8,8,8,8
embedding_dim = 16
"""


def one_error_line(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error: kind=")
    return err[0]


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-data", "--count", "8", "--seed", "1", "--out", str(root / "d")]) == 0
    assert main(["gen-data", "--count", "8", "--seed", "2", "--out", str(root / "e")]) == 0
    (root / "c").write_text(FIXTURE_CONFIG)
    assert main(["train", "--config", str(root / "c"), "--out", str(root / "r")]) == 0
    return root


def test_end_to_end(trained_run, capsys):
    root = trained_run
    assert main(["eval", "--checkpoint", str(root / "r" / "last"), "--fovs", "360,90"]) == 0
    out = capsys.readouterr().out
    assert "fov=360" in out and "fov=90" in out
    report = json.loads((root / "r" / "recall.json").read_text())
    assert report["fovs"] == [360.0, 90.0]


def test_eval_is_deterministic(trained_run, tmp_path):
    root = trained_run
    for name in ("a", "b"):
        assert main(["eval", "--checkpoint", str(root / "r"), "--fovs", "360,180",
                     "--seed", "3", "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "recall.json").read_text() == (tmp_path / "b" / "recall.json").read_text()


def test_consistency(trained_run, tmp_path):
    root = trained_run
    assert main(["consistency", "--checkpoint", str(root / "r" / "last.pt"), "--samples", "2",
                 "--backend", "cosine", "--out", str(tmp_path)]) == 0
    data = json.loads((tmp_path / "consistency_cosine.json").read_text())
    assert data["samples"] == 2 and set(data["fc_grd_by_fov"]) == {"180.0", "90.0", "70.0"}


def test_plot_one_image_per_metric(trained_run, tmp_path, capsys):
    root = trained_run
    assert main(["plot", "--metrics", str(root / "r" / "metrics.csv"), "--out", str(tmp_path)]) == 0
    header = (root / "r" / "metrics.csv").read_text().splitlines()[0].split(",")
    assert sorted(p.stem for p in tmp_path.glob("*.png")) == sorted(header[1:])
    capsys.readouterr()
    assert main(["plot", "--metrics", str(root / "r" / "metrics.csv"), "--format", "svg",
                 "--out", str(tmp_path / "svg")]) == 0
    assert len(list((tmp_path / "svg").glob("*.svg"))) == len(header) - 1


def test_plot_reports_and_overlays(trained_run, tmp_path):
    root = trained_run
    main(["eval", "--checkpoint", str(root / "r"), "--fovs", "360,90", "--out", str(tmp_path)])
    assert main(["plot", "--report", str(tmp_path / "recall.json"), "--checkpoint", str(root / "r"),
                 "--fov", "70", "--out", str(tmp_path / "p")]) == 0
    names = {p.name for p in (tmp_path / "p").glob("*.png")}
    assert "recall.png" in names and sum(n.endswith("_limited.png") for n in names) == 2


def test_degenerate_batch_is_usage_error(tmp_path, capsys):
    (tmp_path / "c").write_text("train_manifest = m.csv\nbatch_size = 1\n")
    assert main(["train", "--config", str(tmp_path / "c"), "--out", str(tmp_path / "r")]) == 2
    line = one_error_line(capsys)
    assert "kind=ConfigError" in line and "degenerate batch" in line


@pytest.mark.parametrize("argv", [
    ["train", "--out", "x", "--bogus"],
    ["eval"],
    ["launch"],
    ["eval", "--checkpoint", "x", "--fovs", "0,90"],
])
def test_usage_errors(argv, capsys):
    assert main(argv) == 2
    one_error_line(capsys)


def test_missing_config_key(tmp_path, capsys):
    (tmp_path / "c").write_text("epochs = 2\n")
    assert main(["train", "--config", str(tmp_path / "c"), "--out", str(tmp_path)]) == 2
    assert "train_manifest" in one_error_line(capsys)


def test_runtime_failure_exits_one(tmp_path, capsys):
    (tmp_path / "broken.pt").write_bytes(b"not a checkpoint")
    assert main(["eval", "--checkpoint", str(tmp_path / "broken.pt"), "--manifest", "x"]) == 1
    one_error_line(capsys)


def test_module_entry_point():
    result = subprocess.run([sys.executable, "-m", "crossview", "plot"], capture_output=True, text=True)
    assert result.returncode == 2
    assert result.stderr.startswith("error: kind=UsageError")
