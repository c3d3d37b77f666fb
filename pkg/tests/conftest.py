import math

import hypothesis
import numpy as np
import pytest

from rcrp_smc.model import Document, Hyperparams, RegionSet

hypothesis.settings.register_profile("default", max_examples=60, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.load_profile("default")


def make_doc(tokens, epoch=0, index=0, location=(0.0, 0.0)):
    """``tokens`` is a dict id -> count or a list of ids."""
    if not isinstance(tokens, dict):
        counts = {}
        for t in tokens:
            counts[t] = counts.get(t, 0) + 1
        tokens = counts
    return Document(epoch, index, dict(sorted(tokens.items())), location)


@pytest.fixture
def two_regions():
    return RegionSet([[0.0, 0.0], [10.0, 10.0]], [np.eye(2), np.eye(2)])


@pytest.fixture
def h_small():
    return Hyperparams(num_regions=2, num_particles=4, delta=0)


LOG_2PI = math.log(2 * math.pi)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: list[str] = []


@pytest.fixture
def accept():
    def record(number: int, name: str, ok: bool, detail: str) -> bool:
        line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {name}: {detail}"
        ACCEPTANCE.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
