import pytest
from hypothesis import settings

from scripthmm.hmm import END, NULL, START, Hmm

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


def chain(*rows, null=None):
    """q0 -> s1 -> ... -> qn where state k emits ``rows[k-1]``."""
    n = len(rows) + 2
    trans = {k: {k + 1: 1.0} for k in range(n - 1)}
    emit = {0: {START: 1.0}, n - 1: {END: 1.0}}
    for k, row in enumerate(rows, 1):
        emit[k] = dict(row)
    return Hmm(tuple(range(n)), trans, emit)


@pytest.fixture
def m0():
    return chain({"a": 0.7, NULL: 0.3})


# one line per acceptance criterion, repeated at the end of the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
