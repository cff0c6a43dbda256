import numpy as np
import pytest
from hypothesis import settings

from steam_eeg import tensor as T

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(autouse=True)
def _float64():
    T.set_default_dtype(np.float64)
    yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_config(**train):
    """A small network that trains in a second or two on 32-sample series."""
    from steam_eeg.cnn1d import BranchConfig
    from steam_eeg.config import RunConfig, TrainConfig
    from steam_eeg.model import NetConfig
    from steam_eeg.mtf import MtfConfig
    from steam_eeg.ssa import SsaConfig

    base = dict(epochs=3, batch_size=8, beta_search=False, lr=1e-2)
    base.update(train)
    return RunConfig(
        ssa=SsaConfig(window=8),
        mtf=MtfConfig(segments=4, states=4, image_size=16),
        net=NetConfig(branch=BranchConfig(layers=((4, 5), (8, 3)), attention_dim=4), stages=((4, 1), (8, 1)),
                      attention_after_stage=(True, True), stem_stride=1, ccsa_dim=4),
        train=TrainConfig(**base),
    )


@pytest.fixture
def tiny():
    return tiny_config


@pytest.fixture(scope="session")
def tiny_data():
    from steam_eeg.synthetic import frequency_dataset

    return frequency_dataset(n_train=24, n_test=16, length=32, channels=2, cycles=(2, 6), noise=0.2, seed=3)


# -- acceptance report -------------------------------------------------------------
_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when not in ("setup", "call"):
        return
    if report.when == "setup" and report.passed:
        return
    number, title = mark.args
    detail = getattr(item, "criterion_detail", "")
    status = "PASS" if report.passed else "FAIL"
    if report.failed and report.longrepr is not None:
        detail = (detail + " | " if detail else "") + str(getattr(report.longrepr, "reprcrash", report.longrepr)
                                                           ).splitlines()[0][:160]
    _CRITERIA[number] = (title, status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status, detail = _CRITERIA[number]
        line = f"criterion {number:>2} {status}  {title}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
