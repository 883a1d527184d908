import pytest

from cvtrust.chain import KeyPair, VehicleId


def keypair(n: int) -> KeyPair:
    return KeyPair(bytes([n % 256]) * 31 + bytes([n // 256]))


def vehicle(region: int, index: int, n: int = None):
    """(VehicleId, KeyPair) with a key derived from ``n`` (defaults to a region/index mix)."""
    kp = keypair(n if n is not None else region * 97 + index + 1)
    return VehicleId(region, index, kp.public_key), kp


@pytest.fixture
def fleet():
    """Ten region-0 vehicles A1..A10 as (id, keypair) pairs."""
    return [vehicle(0, i) for i in range(1, 11)]


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
