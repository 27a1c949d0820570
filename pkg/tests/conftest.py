import numpy as np
import pytest

from app.services.cache import clear_cache
from app.services.data import Session
from app.services.nn.denoiser import init_denoiser_params
from app.services.nn.encoder import Vocabulary
from app.services.nn.evaluator import init_evaluator_params
from app.services.permcore import ItemSequence

ITEMS = (101, 102, 103, 104)
HISTORY = (105, 106)


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def _fresh_cache():
    clear_cache()
    yield
    clear_cache()


@pytest.fixture
def vocab():
    return Vocabulary.build(ITEMS + HISTORY)


@pytest.fixture
def denoiser(vocab):
    return init_denoiser_params(vocab, dim=4, tau=0.5, rng=np.random.default_rng(0), init_scale=0.5)


@pytest.fixture
def evaluator(vocab):
    return init_evaluator_params(vocab, dim=4, hidden=5, rng=np.random.default_rng(1), init_scale=0.5)


@pytest.fixture
def seq3():
    return ItemSequence.from_items(ITEMS[:3])


@pytest.fixture
def session3(seq3):
    return Session(session_id=1, user_id=9, history=HISTORY, displayed=seq3, feedback=(1, 0, 1))
