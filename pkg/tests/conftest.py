import pytest

from relprune.harness.datasets import generate_synthetic
from relprune.tensor_net import build_cnn
from relprune.trainer import AugmentConfig, TrainConfig, train

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def tiny_benchmark():
    """A small CNN trained briefly on a small synthetic image set."""
    ds = generate_synthetic(class_count=3, per_class=40, image_size=8, noise=0.2, seed=0)
    net = build_cnn((1, 8, 8), (4, 6), (8,), 3, seed=0)
    cfg = TrainConfig(epochs=6, seed=0, augmentation=AugmentConfig.none())
    return train(net, ds, cfg).network, ds


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call":
        return
    number, title = marker.args
    verdict = "PASS" if report.passed else "FAIL"
    ACCEPTANCE_LINES.append(f"criterion {number}: {verdict}  {title}")
