import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def orthogonal_design(n, p, rng):
    """Design with X^T X = n I (needs n >= p)."""
    q, _ = np.linalg.qr(rng.standard_normal((n, p)))
    return np.sqrt(n) * q


_VERDICTS: dict[str, str] = {}


def pytest_runtest_logreport(report):
    # one line per acceptance criterion, keyed by the test name prefix (test_a1_...)
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    tag = name.split("_")[1].upper()
    detail = dict(report.user_properties).get("detail", "")
    _VERDICTS[tag] = f"{tag} {'PASS' if report.passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for tag in sorted(_VERDICTS, key=lambda t: int(t[1:])):
        terminalreporter.write_line(_VERDICTS[tag])
