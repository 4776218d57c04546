import os
import sys
import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "repo", deadline=None, derandomize=True, suppress_health_check=[HealthCheck.too_slow], max_examples=40
)
settings.load_profile("repo")

from xaiseg.net import minivgg  # noqa: E402
from xaiseg.synthdata import SynthConfig, gen_dataset  # noqa: E402
from xaiseg.train import TrainConfig, train_classifier  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def corpus():
    return gen_dataset(SynthConfig())


@pytest.fixture(scope="session")
def trained(corpus):
    """MiniVGG trained on the default corpus, with its training time."""
    t = time.perf_counter()
    tr, va = corpus["train"], corpus["val"]
    net, history = train_classifier(minivgg(seed=0), (tr.images, tr.labels), (va.images, va.labels), TrainConfig())
    return net, history, time.perf_counter() - t


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
