import numpy as np
import pytest

from app.config import settings
from app.core.domain import GraphDomain, constant_field, laminate_field
from app.core.rng import stream


@pytest.fixture
def rng():
    return stream(1234)


@pytest.fixture
def flat1():
    return GraphDomain(m=1)


@pytest.fixture
def flat2():
    return GraphDomain(m=2)


@pytest.fixture
def sine2():
    return GraphDomain(m=2, family="sine", amplitude=0.2)


@pytest.fixture
def identity1():
    return constant_field(np.eye(1))


@pytest.fixture
def identity2():
    return constant_field(np.eye(2))


@pytest.fixture
def sinusoid():
    """a(x) = 2 + sin(2 pi x), effective coefficient sqrt(3)."""
    return laminate_field([2.0], [1.0])


@pytest.fixture(autouse=True)
def _restore_threads():
    threads = settings.threads
    yield
    settings.threads = threads
