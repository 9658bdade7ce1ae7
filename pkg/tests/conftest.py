import time

import pytest

from funnelctl import cases


@pytest.fixture(scope="session")
def case1_result():
    """Case-1 replication (new controller + baseline + checks), with wall time."""
    t0 = time.perf_counter()
    res = cases.replicate("case1", out_dir=None, figures=False)
    return res, time.perf_counter() - t0


@pytest.fixture(scope="session")
def case2_result():
    t0 = time.perf_counter()
    res = cases.replicate("case2", out_dir=None, figures=False)
    return res, time.perf_counter() - t0
