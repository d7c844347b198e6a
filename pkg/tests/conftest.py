import numpy as np
import pytest

from crossview.imaging import GROUND, SATELLITE, ViewImage

# filled by the acceptance tests, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_panorama(rng, height=8, width=64, channels=3):
    return ViewImage(rng.random((height, width, channels)).astype(np.float32), GROUND)


def random_satellite(rng, size=16, channels=3):
    return ViewImage(rng.random((size, size, channels)).astype(np.float32), SATELLITE)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Two small generated splits shared by the integration tests."""
    from crossview.data import generate_dataset

    root = tmp_path_factory.mktemp("tiny")
    train = generate_dataset(24, 11, root / "train")
    val = generate_dataset(12, 12, root / "eval")
    return root, train, val


ABLATIONS = {
    "discrete": "satellite_mode = discrete_rotation\nsatellite_init = 1.0\nsatellite_final = 0.25\n",
    "outer": "satellite_mode = outer_rotation\nsatellite_init = 0\nsatellite_final = 45\n",
    "inner": "satellite_mode = inner_rotation\nsatellite_init = 0\nsatellite_final = 45\n",
    "f1": "theta_schedule = linear\n",
    "f2": "theta_schedule = exp_fast_to_slow\ntheta_lambda = 3\n",
    "f3": "theta_schedule = exp_slow_to_fast\ntheta_lambda = 3\n",
    "random": "theta_schedule = random_baseline\n",
}


def run_ablation_grid(root, train_manifest, eval_manifest):
    """Train and evaluate every ablation variant through the CLI; return the recall JSON paths."""
    from crossview.cli import main

    root.mkdir(parents=True, exist_ok=True)
    reports = {}
    for name, extra in ABLATIONS.items():
        cfg = root / f"{name}.cfg"
        cfg.write_text(f"train_manifest = {train_manifest}\neval_manifest = {eval_manifest}\n"
                       "epochs = 2\nbatch_size = 8\nchannels = 8,8,8,8\nembedding_dim = 16\n" + extra)
        run = root / name
        if main(["train", "--config", str(cfg), "--out", str(run)]) != 0:
            raise RuntimeError(f"training failed for {name}")
        if main(["eval", "--checkpoint", str(run / "last"), "--fovs", "360,180,90,70"]) != 0:
            raise RuntimeError(f"evaluation failed for {name}")
        reports[name] = run / "recall.json"
    return reports
