import os

import pytest

from attnflow.core import make_template


@pytest.fixture(scope="session", autouse=True)
def isolated_cache(tmp_path_factory):
    """Keep metric-matrix cache files inside the test tree."""
    d = tmp_path_factory.mktemp("qmcache")
    old = os.environ.get("ATTNFLOW_CACHE_DIR")
    os.environ["ATTNFLOW_CACHE_DIR"] = str(d)
    yield str(d)
    if old is None:
        os.environ.pop("ATTNFLOW_CACHE_DIR", None)
    else:
        os.environ["ATTNFLOW_CACHE_DIR"] = old


@pytest.fixture
def retain_a_template():
    """Non-recompute walk-through: A held at the k layer, E held at the
    j layer, B/C/D streamed tile by tile."""
    return make_template("ilkj", {"A": "k", "B": "intra", "C": "intra",
                                  "D": "intra", "E": "j"})


@pytest.fixture
def recompute_template():
    """Recompute walk-through: j iterates outside k, A held at the k layer,
    E held at the l layer, B/C/D streamed."""
    return make_template("ijlk", {"A": "k", "B": "intra", "C": "intra",
                                  "D": "intra", "E": "l"})
