import numpy as np
import pytest

from hardmax_classifier.initialization import InitConfig, init_network
from hardmax_classifier.model import ModelConfig


@pytest.fixture
def small_cfg():
    return ModelConfig(d=1, l=2, h=2, I=7, d_key=3, d_ff=6, N=2, J=4, beta=2.0, K=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_network(cfg, seed=0, c4=1.0, tau=None):
    tau = cfg.l + 1 if tau is None else tau
    return init_network(cfg, InitConfig(tau=tau, c4=c4, seed=seed))


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
