import numpy as np
import pytest
from hypothesis import settings

from xrayfield.geometry import LpbCamera, LpbIntrinsics, Rigid3

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def simple_camera(f=1.0, cx=5.0, s=1.0, k1=0.0, k2=0.0, rot=(0, 0, 0), trans=(0, 0, 0), size=(10, 10)):
    return LpbCamera(LpbIntrinsics(f, cx, s, k1, k2), Rigid3(np.array(rot, float), np.array(trans, float)), size)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# --- acceptance summary -------------------------------------------------------

_ACCEPTANCE: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    number, title = mark.args
    detail = dict(item.user_properties).get("detail", "")
    status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
    _ACCEPTANCE[number] = (status, title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        status, title, detail = _ACCEPTANCE[number]
        line = f"[{status}] {number:2d}. {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))
