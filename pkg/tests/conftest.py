import os

import numpy as np
import pytest

from sizeunfold import harness

DATA = os.path.join(os.path.dirname(__file__), "data")

# sample sizes of the shared references: the estimation reference is larger
# than the generation one, as in the reproduction runs
FIT_SAMPLES = 10**7
GEN_SAMPLES = 10**6

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number): acceptance criterion checked by the test")


@pytest.fixture(scope="session")
def refcache(pytestconfig):
    return str(pytestconfig.cache.mkdir("refcache"))


@pytest.fixture(scope="session")
def reference(refcache):
    """Factory for cached fitted references, ``reference(shape, n, stream)``."""
    memo = {}

    def get(shape, n_samples=GEN_SAMPLES, stream=harness.STREAM_REF_FIT, seed=0):
        key = (shape, n_samples, stream, seed)
        if key not in memo:
            memo[key] = harness.get_reference(shape, n_samples, seed, stream, refcache)
        return memo[key]

    return get


@pytest.fixture(scope="session")
def sim_references(reference):
    """``(estimation, generation)`` references of a shape for simulation runs."""
    def get(shape):
        return (reference(shape, FIT_SAMPLES, harness.STREAM_REF_FIT),
                reference(shape, GEN_SAMPLES, harness.STREAM_REF_GEN))

    return get


@pytest.fixture(scope="session")
def dodeca_ref(reference):
    return reference("dodecahedron", GEN_SAMPLES, harness.STREAM_REF_FIT)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _criterion_property(request):
    marker = request.node.get_closest_marker("criterion")
    if marker is not None:
        request.node.user_properties.append(("criterion", marker.args[0]))


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    number = props.get("criterion")
    if number is None or (report.when != "call" and report.passed):
        return
    ok, details = _criteria.get(number, (True, []))
    detail = props.get("detail") or f"{report.nodeid.split('::')[-1]} {report.outcome}"
    _criteria[number] = (ok and report.passed, details + [detail])


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        ok, details = _criteria[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {'; '.join(details)}")
