import math

import pytest

from sdbridge.bridge import MemportEntry, SerdesLink
from sdbridge.bus import AddressRegion, LocalMemoryModel
from sdbridge.sim import Simulator
from sdbridge.system import build_two_node

APERTURE = AddressRegion(0x4_0000_0000, 448 << 30)
REMOTE = AddressRegion(0x8_0000_0000, 2 << 30)
WINDOW = AddressRegion(APERTURE.base, 1 << 30)


def ideal_link() -> SerdesLink:
    return SerdesLink(line_rate=math.inf, payload_rate=math.inf, header_bits=0)


def map_all(system, window: AddressRegion = WINDOW, remote_base: int = REMOTE.base):
    """Static memport entries for every master of node 0 -> node 1 port 0."""
    e = MemportEntry(window, remote_base - window.base, 0, 1, 0)
    for m in system.nodes[0].masters:
        system.nodes[0].bridge.table(m).set_slot(0, e)
    return e


@pytest.fixture
def sim():
    return Simulator()


@pytest.fixture
def ideal_pair(sim):
    """Two nodes, zero slave latency, unbounded link: only pipelines cost time."""
    system = build_two_node(sim, link=ideal_link(), local_model=LocalMemoryModel(latency_ns=0))
    map_all(system)
    return system


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
