import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dfeianet.data import write_synthetic_dataset  # noqa: E402
from dfeianet.network import NetworkConfig  # noqa: E402

TINY = dict(stage_depths=[1, 1, 1, 1], stage_channels=[16, 32, 32, 64], input_size=32)

_acceptance: dict[str, str] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    label = marker.args[0] if marker.args else item.name
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        prev = _acceptance.get(label)
        status = "PASS" if rep.outcome == "passed" else "FAIL"
        _acceptance[label] = "FAIL" if prev == "FAIL" else status


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_acceptance, key=lambda s: int(s.split(".")[0])):
        terminalreporter.write_line(f"{_acceptance[label]}  {label}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return NetworkConfig(**TINY)


@pytest.fixture(scope="session")
def synthetic_root(tmp_path_factory):
    return write_synthetic_dataset(tmp_path_factory.mktemp("synthetic"), n_classes=8, per_class=4,
                                   size=32, seed=0)


@pytest.fixture(scope="session")
def tiny_config_file(tmp_path_factory):
    import json
    path = tmp_path_factory.mktemp("cfg") / "tiny.json"
    path.write_text(json.dumps(TINY))
    return path


@pytest.fixture(scope="session")
def overfit_run(tmp_path_factory, synthetic_root, tiny_config_file):
    """Two identical ``dfeianet train`` invocations on the synthetic set (100 epochs = 200 steps).

    lr 5e-3: at the 5e-4 default most seeds stall on a pair-merging plateau within
    200 steps; 5e-3 converged for every seed in 0..11.
    """
    import time

    from dfeianet.cli import main

    out = tmp_path_factory.mktemp("overfit")
    runs = []
    for i in range(2):
        weights, log = out / f"w{i}.dfew", out / f"log{i}.jsonl"
        t0 = time.perf_counter()
        code = main(["train", "--data", str(synthetic_root), "--config", str(tiny_config_file),
                     "--epochs", "100", "--lr", "5e-3", "--seed", "7", "--out", str(weights), "--log", str(log),
                     "--plot", str(out / f"curves{i}.png")])
        runs.append(dict(code=code, weights=weights, log=log, seconds=time.perf_counter() - t0,
                         plot=out / f"curves{i}.png"))
    return runs
