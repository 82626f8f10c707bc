import numpy as np
import pytest

from rlnloc.synth import PhantomParams, generate_phantom


@pytest.fixture(scope="session")
def phantom():
    """A zero-noise centred left phantom: (mask, image, landmark)."""
    return generate_phantom(PhantomParams(rln_noise=0.0), seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_mask(rng, shape=(32, 32), blobs=6):
    """Rectangles of random labels; always has some foreground."""
    m = np.zeros(shape, dtype=np.uint8)
    h, w = shape
    for _ in range(blobs):
        y0, x0 = rng.integers(0, h - 4), rng.integers(0, w - 4)
        m[y0:y0 + rng.integers(2, 8), x0:x0 + rng.integers(2, 8)] = rng.integers(1, 4)
    return m


# -- acceptance summary ---------------------------------------------------------------

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or rep.when not in ("setup", "call"):
        return
    number, title = mark.args
    if rep.failed or (rep.when == "call"):
        detail = getattr(item, "acceptance_detail", "")
        _CRITERIA[number] = (title, "PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, verdict, detail = _CRITERIA[number]
        line = f"criterion {number} [{title}]: {verdict}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
