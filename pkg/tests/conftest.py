import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pdrima.canon import KeyPair, KeyRole  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"

# criterion id -> (description, passed); filled by test_acceptance.py
ACCEPTANCE: dict[str, tuple[str, bool]] = {}


@pytest.fixture(scope="session")
def rml_key() -> KeyPair:
    return KeyPair.generate(KeyRole.RML, seed=2)


@pytest.fixture(scope="session")
def attest_key() -> KeyPair:
    return KeyPair.generate(KeyRole.ATTEST, seed=1)


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE, key=lambda c: int(c[2:])):
        desc, ok = ACCEPTANCE[cid]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {cid:5s} {desc}")
