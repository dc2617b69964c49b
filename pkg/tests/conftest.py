"""Shared fixtures: small scripted recordings, sliced once per session."""

import sys

import numpy as np
import pytest

from scnmine import synthgen
from scnmine.slicing import slice_all


def _sliced(spec):
    ts, rm, gt = synthgen.generate(spec)
    atoms = slice_all(ts, rm)
    return ts, rm, gt, atoms


@pytest.fixture(scope="session")
def follow_case():
    return _sliced(synthgen.follow_script(0))


@pytest.fixture(scope="session")
def merge_case():
    return _sliced(synthgen.merge_script(0))


@pytest.fixture(scope="session")
def three_phase_case():
    return _sliced(synthgen.three_phase_script(0))


@pytest.fixture(scope="session")
def crossing_case():
    return _sliced(synthgen.crossing_script(0))


@pytest.fixture(scope="session")
def risk_case():
    """A reduced risk corpus: the ego DCL atom of every script."""
    specs, _ = synthgen.risk_corpus(n_normal=10, n_low_ttc=2, n_right_of_way=2, seed=3)
    out = []
    for spec in specs:
        ts, rm, gt = synthgen.generate(spec)
        atoms = [a for a in slice_all(ts, rm, egos=["E"]) if a.itype.value == "DynamicConflictLine"]
        out.append((spec, atoms))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
