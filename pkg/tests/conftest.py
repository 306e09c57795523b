import numpy as np
import pytest

# acceptance results collected by tests/test_acceptance.py, printed at the end of the run
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def random_symmetric_graphs(rng, T, N, density=0.4):
    S = (rng.uniform(size=(T, N, N)) < density).astype(np.float64)
    S = np.triu(S, 1)
    return S + np.swapaxes(S, -1, -2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE, key=lambda s: (int(s.split()[0].rstrip("abcd")), s)):
        ok, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {name}: {detail}")
