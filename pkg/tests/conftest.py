import warnings

import numpy as np
import pytest
from hypothesis import settings

from ibival.core import Source, validate_series

# derandomized so the suite gives the same verdict on every run
settings.register_profile("repro", derandomize=True, deadline=None, max_examples=200)
settings.load_profile("repro")


@pytest.fixture
def series():
    def make(ts, source=Source.REFERENCE, **kw):
        return validate_series(np.asarray(ts), source, **kw)

    return make


@pytest.fixture
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[n])
