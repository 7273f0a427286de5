import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from smamba import srt
from smamba.data import degrade_dataset, write_phantom_dataset

FIXTURES = Path(__file__).parent / "fixtures"

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture(scope="session")
def oracles():
    return json.loads((FIXTURES / "oracles.json").read_text())


@pytest.fixture(scope="session")
def fixture_array():
    return lambda name: srt.load(FIXTURES / name)


@pytest.fixture(scope="session")
def phantom_manifest(tmp_path_factory):
    """Twelve 64x64 phantoms (8 train, 4 test) degraded at scale 2."""
    root = tmp_path_factory.mktemp("phantoms")
    write_phantom_dataset(root, 12, 64, seed=0, n_test=4)
    degrade_dataset(root / "manifest.json", 2)
    return root / "manifest.json"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion and print it immediately."""
    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d} {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
