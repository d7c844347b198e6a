import json

from crossview.trainer import read_metrics

from conftest import ABLATIONS, run_ablation_grid


def test_every_variant_runs_from_config(tmp_path, tiny_dataset):
    _, train, val = tiny_dataset
    reports = run_ablation_grid(tmp_path, train, val)
    assert set(reports) == set(ABLATIONS)
    tables = {}
    for name, path in reports.items():
        data = json.loads(path.read_text())
        assert data["fovs"] == [360.0, 180.0, 90.0, 70.0]
        assert (path.parent / "recall.csv").is_file()
        tables[name] = data
    # all reports share one layout so they can be compared side by side
    layouts = {tuple(sorted(d["table"]["90.0"])) for d in tables.values()}
    assert len(layouts) == 1
    inner = read_metrics(tmp_path / "inner" / "metrics.csv")
    assert [r["p"] for r in inner] == [0.0, 22.5]
