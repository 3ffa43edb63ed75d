import numpy as np
import pytest

from rand_adjust import Dataset


def random_dataset(rng, n=50, d=3, p=0.5, intercept=True, noise=1.0):
    """Linear-ish data with a treatment interaction; intercept appended last."""
    X = rng.normal(size=(n, d))
    n1 = int(round(p * n))
    z = np.zeros(n, dtype=int)
    z[rng.choice(n, n1, replace=False)] = 1
    beta = rng.normal(size=d)
    y = 1.0 + X @ beta + z * (0.5 + X[:, 0]) + noise * rng.normal(size=n)
    if intercept:
        X = np.column_stack([X, np.ones(n)])
    return Dataset(X, y, z, has_intercept=intercept)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(str(v) for v in r) + "\n")
    return str(path)


# -- acceptance reporting ----------------------------------------------------------
# each acceptance test records one line; they are echoed in the terminal summary

ACCEPTANCE_LINES: dict[int, str] = {}


class _Criterion:
    def __init__(self, number, title):
        self.number, self.title = number, title
        self.detail = ""

    def note(self, detail):
        self.detail = detail


@pytest.fixture
def criterion(request):
    marker = request.node.get_closest_marker("criterion")
    rec = _Criterion(*marker.args)
    yield rec
    call = getattr(request.node, "rep_call", None)
    ok = call is not None and call.passed
    line = f"criterion {rec.number:>2} {'PASS' if ok else 'FAIL'}  {rec.title}: {rec.detail}"
    ACCEPTANCE_LINES[rec.number] = line
    print("\n" + line)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
