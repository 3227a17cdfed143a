import numpy as np
import pytest

from oecpipe import rans
from oecpipe.entropy_models import GaussianConditional, quantize_pmf


@pytest.fixture(scope="session")
def gc():
    return GaussianConditional()


@pytest.fixture(params=sorted(rans.kernels()))
def kernel(request, monkeypatch):
    """Run the test once per available kernel by swapping the active one."""
    k = rans.kernels()[request.param]
    monkeypatch.setattr(rans, "_kernel", k)
    return k


def random_table(rng, precision_bits=None, size=None, zeros=True):
    """Valid CdfTable with random frequencies, some of them zero."""
    p = int(rng.integers(8, 17)) if precision_bits is None else precision_bits
    total = 1 << p
    n = int(rng.integers(1, min(300, total) + 1)) if size is None else size
    weights = rng.exponential(1.0, n) ** 2
    if zeros and n > 1:
        weights[rng.random(n) < 0.15] = 0
    if weights.sum() == 0:
        weights[0] = 1.0
    freq = quantize_pmf(weights / weights.sum(), p)
    return rans.CdfTable(p, np.concatenate([[0], np.cumsum(freq)]))


def codable_symbols(rng, table, n):
    freq = table.freq
    live = np.flatnonzero(freq)
    probs = freq[live] / freq[live].sum()
    return rng.choice(live, size=n, p=probs)


# criterion id -> (passed, detail), filled by test_acceptance
ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"{key} {'PASS' if passed else 'FAIL'}  {detail}")
