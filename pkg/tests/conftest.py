import numpy as np
import pytest
import torch

from privsemcom.config import ExperimentConfig
from privsemcom.data import load_dataset


@pytest.fixture
def tiny_cfg():
    return ExperimentConfig(dataset="synthetic", latent_dim=8, epochs=1, eve_epochs=1, batch_size=16,
                            subset_size=48, cls_hidden=(32, 16), seed=3)


@pytest.fixture
def tiny_data():
    train = load_dataset("synthetic", "train", 48, np.random.default_rng(0))
    test = load_dataset("synthetic", "test", 32, np.random.default_rng(1))
    return train, test


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


# --- acceptance summary -------------------------------------------------------

_CRITERIA: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if "test_criterion_" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    detail = dict(report.user_properties).get("detail", "")
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        outcome = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        if report.when == "setup" and not detail:
            detail = "fixture failed" if report.outcome == "failed" else "skipped"
        _CRITERIA[name] = (outcome, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_CRITERIA):
        outcome, detail = _CRITERIA[name]
        number = int(name.split("_")[2])
        terminalreporter.write_line(f"criterion {number:2d} {outcome}  {detail}")
