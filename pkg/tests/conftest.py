import time
from dataclasses import dataclass
from pathlib import Path

import pytest

from qbye_mixer.mixer import MixerConfig
from qbye_mixer.synthetic import generate_dataset
from qbye_mixer.training import TrainConfig, TrainResult, load_manifest, train

# reduced model used for the desk-scale behaviour checks
REDUCED = MixerConfig(n_blocks=4)
N_CLASSES, PER_CLASS = 10, 20

_acceptance: dict[str, str] = {}


@dataclass
class TrainedModel:
    root: Path
    result: TrainResult
    eval_manifest: Path
    elapsed_s: float


@pytest.fixture(scope="session")
def trained_model(tmp_path_factory) -> TrainedModel:
    start = time.perf_counter()
    root = tmp_path_factory.mktemp("synthetic")
    manifest = generate_dataset(root, N_CLASSES, PER_CLASS, seed=0, eval_classes=1, eval_per_class=23,
                                eval_enroll=3, eval_negatives=40)
    entries, labels = load_manifest(manifest)
    result = train(entries, labels, TrainConfig(seed=0, noise_dir=str(root / "noise")), REDUCED)
    return TrainedModel(root, result, root / "eval.jsonl", time.perf_counter() - start)


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or report.outcome != "passed":
        name = report.nodeid.split("::")[-1]
        if report.outcome != "passed" or name not in _acceptance:
            _acceptance[name] = "PASS" if report.outcome == "passed" else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, verdict in _acceptance.items():
        terminalreporter.write_line(f"{verdict}  {name}")
