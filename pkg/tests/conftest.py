import numpy as np
import pytest

from la3p import approx, sum_tree

TREE_BACKENDS = sorted(sum_tree.BACKENDS)
NN_BACKENDS = sorted(approx.BACKENDS)


@pytest.fixture(params=TREE_BACKENDS)
def tree_backend(request):
    return request.param


@pytest.fixture(params=NN_BACKENDS)
def nn_backend(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance report ------------------------------------------------------

_RESULTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_RESULTS] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (rep.when != "call" and not rep.failed):
        return
    n, title = marker.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
    if not rep.passed and rep.when != "call":
        detail = f"{rep.when} error"
    item.config.stash[_RESULTS][n] = f"criterion {n:>2}: {status}  {title}" + (f" | {detail}" if detail else "")


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash[_RESULTS]
    if results:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
