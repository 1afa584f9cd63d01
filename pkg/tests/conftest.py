from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import helpers  # noqa: E402
from synthscape.cli import main  # noqa: E402
from synthscape.synthesis import SourcePools  # noqa: E402

_CRITERIA: list[str] = []


def record_criterion(line: str) -> None:
    """Keep a PASS/FAIL line for the end-of-run summary."""
    print(line)
    _CRITERIA.append(line)


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def vocal_pool():
    return helpers.isolated_pool(32)


@pytest.fixture(scope="session")
def contaminants():
    return helpers.contaminant_clips()


@pytest.fixture(scope="session")
def white_pools(vocal_pool, contaminants):
    bgs = [helpers.white_background(s, 11.0) for s in range(3)]
    return SourcePools(bgs, list(vocal_pool), list(contaminants))


@pytest.fixture(scope="session")
def mixed_pools(vocal_pool, contaminants):
    bgs = [
        helpers.white_background(11, 11.0),
        helpers.coloured_background(12, "pink", 11.0),
        helpers.coloured_background(13, "brown", 11.0),
        helpers.coloured_background(14, "wind", 11.0),
        helpers.coloured_background(15, "band", 11.0, bounds=(500.0, 12000.0)),
    ]
    return SourcePools(bgs, list(vocal_pool), list(contaminants))


@pytest.fixture(scope="session")
def sources(tmp_path_factory):
    """Catalogs on disk plus an isolated pool built through the CLI."""
    root = tmp_path_factory.mktemp("sources")
    paths = helpers.write_sources(root)
    assert main(["isolate", str(paths["catalog"]), str(paths["pool"])]) == 0
    return paths


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
