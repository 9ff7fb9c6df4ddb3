import numpy as np
import pytest

from pnet.dataset import ExpressionMatrix, PhenotypeLabels


def random_W(rng, n, nonneg=False):
    """Random symmetric similarity matrix with unit diagonal."""
    X = rng.standard_normal((n, max(3, n // 2)))
    W = np.corrcoef(X)
    if nonneg:
        W = np.abs(W)
    W = (W + W.T) / 2
    np.fill_diagonal(W, 1.0)
    return W


def random_kernel(rng, n):
    """Symmetric nonnegative matrix, like a filtered random-walk kernel."""
    A = rng.random((n, n))
    return (A + A.T) / 2


def random_positives(rng, n, min_each=1):
    while True:
        y = rng.random(n) < rng.uniform(0.2, 0.8)
        if y.sum() >= min_each and (~y).sum() >= min_each:
            return y


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_matrix():
    M = ExpressionMatrix(
        ["g1", "g2", "g3"],
        ["a", "b"],
        np.array([[1.0, 2.0], [3.0, 5.0], [7.0, 11.0]]),
    )
    return M


def make_labels(ids, flags):
    return PhenotypeLabels(list(ids), np.asarray(flags, dtype=bool))


# --- acceptance summary: one line per criterion at the end of the run -------

_ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, text): acceptance criterion")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    from _pytest.runner import TestReport

    rep = TestReport.from_item_and_call(item, call)
    if rep.when == "call" or (rep.when == "setup" and rep.skipped):
        number, text = marker.args
        if rep.skipped:
            status = "SKIP"
            detail = rep.longrepr[2] if isinstance(rep.longrepr, tuple) else ""
        else:
            status = "PASS" if rep.passed else "FAIL"
            detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
        _ACCEPTANCE[number] = (status, text, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        status, text, detail = _ACCEPTANCE[number]
        line = f"criterion {number:2d}: {status}  {text}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)
