import contextlib
import time
from pathlib import Path

import pytest

from trustwire.keyfabric import generate_keypair
from trustwire.simharness import Network, table1_scenario

GOLDEN = Path(__file__).parent / "golden"

_acceptance_lines: list[str] = []


@contextlib.contextmanager
def criterion(number: int, title: str, max_seconds: float | None = None):
    """Record one acceptance criterion as PASS/FAIL for the terminal summary."""
    start = time.perf_counter()
    try:
        yield
    except BaseException as exc:
        detail = str(exc).splitlines()[0] if str(exc) else ""
        reason = f"{type(exc).__name__}: {detail}" if detail else type(exc).__name__
        _acceptance_lines.append(f"FAIL  criterion {number}: {title} ({reason})")
        raise
    elapsed = time.perf_counter() - start
    if max_seconds is not None and elapsed >= max_seconds:
        _acceptance_lines.append(f"FAIL  criterion {number}: {title} (took {elapsed:.2f}s, limit {max_seconds}s)")
        pytest.fail(f"criterion {number} took {elapsed:.2f}s, limit {max_seconds}s")
    _acceptance_lines.append(f"PASS  criterion {number}: {title} ({elapsed:.2f}s)")


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_acceptance_lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def table1_net():
    return Network(table1_scenario())


@pytest.fixture
def fresh_net():
    return Network(table1_scenario())


@pytest.fixture(scope="session")
def golden_request():
    return (GOLDEN / "request_cia_fbi_seed7.bin").read_bytes()


@pytest.fixture(scope="session")
def golden_response():
    return (GOLDEN / "response_fbi_cia_seed7.bin").read_bytes()


@pytest.fixture(scope="session")
def small_pairs():
    """Two distinct 128-bit key pairs for quick transform tests."""
    return generate_keypair(128, 1), generate_keypair(128, 2)
