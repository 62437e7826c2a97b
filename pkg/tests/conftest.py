import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from edgeguard.dataset import split_train_test  # noqa: E402
from edgeguard.pipeline import TrainOptions, fit_model  # noqa: E402
from edgeguard.sim.corpus import surrogate_corpus  # noqa: E402


@pytest.fixture(scope="session")
def corpus():
    """Simulator-labelled table in the dataset schema; small enough for unit tests."""
    return surrogate_corpus(seeds=(100, 101))


@pytest.fixture(scope="session")
def corpus_split(corpus):
    return split_train_test(corpus, 0.3, seed=1, stratify=True)


@pytest.fixture(scope="session")
def trained_dt(corpus_split):
    train, _ = corpus_split
    return fit_model(train, TrainOptions(algo="dt", seed=0))


@pytest.fixture(scope="session")
def full_corpus():
    """The default eight-scenario surrogate corpus."""
    return surrogate_corpus()


@pytest.fixture(scope="session")
def well_trained_dt(full_corpus):
    return fit_model(full_corpus, TrainOptions(algo="dt", seed=0))


def pytest_terminal_summary(terminalreporter):
    lines = getattr(sys.modules.get("test_acceptance"), "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
