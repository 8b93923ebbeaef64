import pytest
from hypothesis import given
from hypothesis import strategies as st

from sdbridge.bus import (AddressRegion, BusChannel, Flit, Kind, LocalMemoryModel, MemoryMap,
                          MemorySlave, Transaction, complete, decode_header, decompose,
                          encode_header, make_route)
from sdbridge.errors import ConfigError, ProtocolViolation, UnmappedAddress
from sdbridge.sim import Simulator, ns


def test_region_relations():
    a = AddressRegion(0x1000, 0x1000)
    assert a.contains(0x1000) and not a.contains(0x2000)
    assert a.overlaps(AddressRegion(0x1fff, 1))
    assert not a.overlaps(AddressRegion(0x2000, 1))
    assert AddressRegion(0x1800, 0x100).within(a)
    with pytest.raises(ConfigError):
        AddressRegion(0, 0)
    with pytest.raises(ConfigError):
        AddressRegion((1 << 64) - 1, 2)


def test_memory_map_rejects_overlap_and_resolves():
    m = MemoryMap([(AddressRegion(0, 0x100), "a"), (AddressRegion(0x200, 0x100), "b")])
    with pytest.raises(ConfigError):
        m.add(AddressRegion(0xff, 2), "c")
    assert m.lookup(0x250) == "b"
    assert m.lookup(0x150) is None
    assert m.resolve(0x200, 0x100) == "b"
    with pytest.raises(UnmappedAddress):
        m.resolve(0xf0, 0x20)


def test_decompose_read_and_write():
    r = decompose(Transaction(1, 0, Kind.READ, 0x40, 8, 4))
    assert [f.channel for f in r] == [BusChannel.READ_REQ]
    assert r[0].burst_len == 4 and r[0].payload == 0
    w = decompose(Transaction(2, 0, Kind.WRITE, 0x40, 8, 4))
    assert [f.channel for f in w] == [BusChannel.WRITE_REQ] + [BusChannel.WRITE_DATA] * 4
    assert sum(f.payload for f in w) == 32
    assert [f.last for f in w[1:]] == [False, False, False, True]


@given(st.integers(0, 255), st.integers(0, 255), st.sampled_from(list(BusChannel)), st.booleans(),
       st.integers(0, 255), st.integers(0, 255), st.integers(0, 255), st.integers(0, 0xFFFFF))
def test_header_roundtrip(node, port, ch, last, beat, master, src_node, txn):
    f = Flit(ch, master, txn, beat, 8, last, make_route(node, port), src_node)
    d = decode_header(encode_header(f))
    assert d == {"route": f.route, "channel": ch, "last": last, "beat": beat, "src_master": master,
                 "src_node": src_node, "txn_id": txn}


def test_complete_checks_protocol():
    t = Transaction(3, 1, Kind.READ, 0, 8, 2)
    beats = [(10, Flit(BusChannel.READ_DATA, 1, 3, i, 8, i == 1)) for i in range(2)]
    assert complete(t, beats).done_time == 10
    with pytest.raises(ProtocolViolation):
        complete(t, beats[:1])
    with pytest.raises(ProtocolViolation):
        complete(t, [(5, Flit(BusChannel.READ_DATA, 1, 4, 0, 8))] * 2)
    w = Transaction(4, 1, Kind.WRITE, 0, 8, 2)
    with pytest.raises(ProtocolViolation):
        complete(w, beats)


def test_slave_latency_and_bandwidth():
    sim = Simulator()
    out = []
    model = LocalMemoryModel(latency_ns=60, bandwidth=64e9)  # 1 ns per 64 B
    s = MemorySlave(sim, model, AddressRegion(0, 1 << 20), lambda fl: out.append((sim.now, fl)))
    for i in range(3):
        s.accept(decompose(Transaction(i, 0, Kind.READ, 64 * i, 8, 8))[0])
    sim.run()
    assert [t for t, _ in out] == [ns(60), ns(61), ns(62)]
    assert all(len(fl) == 8 for _, fl in out)


def test_slave_outstanding_limit():
    sim = Simulator()
    out = []
    model = LocalMemoryModel(latency_ns=100, bandwidth=1e15, max_outstanding=2)
    s = MemorySlave(sim, model, AddressRegion(0, 1 << 20), lambda fl: out.append(sim.now))
    for i in range(4):
        s.accept(decompose(Transaction(i, 0, Kind.READ, 0, 8, 1))[0])
    sim.run()
    assert out == [ns(100), ns(100), ns(200), ns(200)]


def test_slave_write_needs_all_beats():
    sim = Simulator()
    out = []
    s = MemorySlave(sim, LocalMemoryModel(latency_ns=0), AddressRegion(0, 1 << 20), out.extend)
    flits = decompose(Transaction(0, 0, Kind.WRITE, 0, 8, 4))
    for f in flits[:-1]:
        s.accept(f)
    sim.run()
    assert out == []
    s.accept(flits[-1])
    sim.run()
    assert [f.channel for f in out] == [BusChannel.WRITE_RESP]
    with pytest.raises(ProtocolViolation):
        s.accept(flits[2])


def test_slave_rejects_out_of_region():
    s = MemorySlave(Simulator(), LocalMemoryModel(), AddressRegion(0, 0x100), lambda fl: None)
    with pytest.raises(UnmappedAddress):
        s.accept(decompose(Transaction(0, 0, Kind.READ, 0xf8, 8, 2))[0])
