import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hetrain import HEContext, HEParams

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def ctx():
    return HEContext(HEParams(), noise_seed=0)


@pytest.fixture
def keys(ctx):
    return ctx.keygen(np.random.default_rng(1234))


def small_ctx(B: int, L: int = 30, sigma: float = 0.0):
    """Context with ``B`` slots (S = isqrt(B)); helper for hand-sized examples."""
    return HEContext(HEParams(2 * B, B, int(np.sqrt(B)), L, sigma), noise_seed=0)


@pytest.fixture
def small():
    def make(B=8, L=30, sigma=0.0):
        c = small_ctx(B, L, sigma)
        sk, pk = c.keygen(np.random.default_rng(7))
        return c, sk, pk

    return make


# one verdict line per acceptance criterion, printed at the end of the run
_verdicts = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): gating acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or report.when == "teardown" or (report.when == "setup" and report.passed):
        return
    number, title = mark.args
    detail = dict(item.user_properties).get("detail", "")
    _verdicts[number] = (title, "PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_verdicts):
        title, verdict, detail = _verdicts[number]
        terminalreporter.write_line(f"criterion {number:>2} {verdict}  {title}" + (f"  [{detail}]" if detail else ""))
