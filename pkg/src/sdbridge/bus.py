"""Transaction-level bus model: five split channels, flit decomposition and a
fixed-latency, bandwidth-capped memory slave."""

from __future__ import annotations

import bisect
from collections import deque
from dataclasses import dataclass
from enum import IntEnum

from .errors import ConfigError, ProtocolViolation, UnmappedAddress
from .sim import PRIO_SERVICE, Simulator, ns

ADDR_MASK = (1 << 64) - 1

# bit-exact flit header (8 bytes, little endian)
TAG_BITS = 16
HEADER_BYTES = 8


class BusChannel(IntEnum):
    READ_REQ = 0
    WRITE_REQ = 1
    WRITE_DATA = 2
    READ_DATA = 3
    WRITE_RESP = 4

    @property
    def is_request(self) -> bool:
        return self <= BusChannel.WRITE_DATA


REQUEST_CHANNELS = (BusChannel.READ_REQ, BusChannel.WRITE_REQ, BusChannel.WRITE_DATA)
RESPONSE_CHANNELS = (BusChannel.READ_DATA, BusChannel.WRITE_RESP)


class Kind(IntEnum):
    READ = 0
    WRITE = 1


@dataclass(frozen=True, order=True)
class AddressRegion:
    base: int
    size: int

    def __post_init__(self):
        if self.size <= 0:
            raise ConfigError(f"region size must be > 0, got {self.size}")
        if self.base < 0 or self.base + self.size > ADDR_MASK + 1:
            raise ConfigError(f"region {self.base:#x}+{self.size:#x} overflows 64 bits")

    @property
    def end(self) -> int:
        return self.base + self.size

    def contains(self, addr: int) -> bool:
        return self.base <= addr < self.base + self.size

    def contains_range(self, addr: int, size: int) -> bool:
        return self.base <= addr and addr + size <= self.base + self.size

    def overlaps(self, other: "AddressRegion") -> bool:
        return self.base < other.end and other.base < self.end

    def within(self, other: "AddressRegion") -> bool:
        return other.base <= self.base and self.end <= other.end

    def aligned(self, granule: int) -> bool:
        return self.base % granule == 0 and self.size % granule == 0

    def __str__(self):
        return f"[{self.base:#x}, {self.end:#x})"


@dataclass(slots=True)
class Transaction:
    txn_id: int
    master: int
    kind: Kind
    addr: int
    beat_size: int = 8
    burst_len: int = 8
    issue_time: int = 0
    node: int = 0

    def __post_init__(self):
        if self.burst_len < 1:
            raise ConfigError("burst length must be >= 1")
        if self.beat_size < 1:
            raise ConfigError("beat size must be >= 1")

    @property
    def nbytes(self) -> int:
        return self.beat_size * self.burst_len


@dataclass(slots=True)
class Flit:
    channel: BusChannel
    src_master: int
    txn_id: int
    beat: int = 0
    payload: int = 0
    last: bool = True
    route: int = 0  # (dest node << 8) | dest port
    src_node: int = 0
    addr: int = 0  # request channels only; translated by the bridge
    burst_len: int = 1
    txn: Transaction | None = None
    xcvr: int = -1  # transceiver the request arrived on (mirror path)
    entry: object = None  # memport entry that steered the request

    @property
    def dest_node(self) -> int:
        return self.route >> 8

    @property
    def dest_port(self) -> int:
        return self.route & 0xFF


def make_route(node: int, port: int) -> int:
    if not (0 <= node < 256 and 0 <= port < 256):
        raise ConfigError(f"routing tag out of range: node {node}, port {port}")
    return (node << 8) | port


def encode_header(f: Flit) -> bytes:
    """Pack a flit header into 8 bytes.

    bits  0-15 routing tag, 16-18 channel, 19 last, 20-27 beat index,
    28-35 source master, 36-43 source node, 44-63 txn id (low 20 bits).
    """
    word = (
        (f.route & 0xFFFF)
        | (int(f.channel) & 0x7) << 16
        | int(bool(f.last)) << 19
        | (f.beat & 0xFF) << 20
        | (f.src_master & 0xFF) << 28
        | (f.src_node & 0xFF) << 36
        | (f.txn_id & 0xFFFFF) << 44
    )
    return word.to_bytes(HEADER_BYTES, "little")


def decode_header(raw: bytes) -> dict:
    w = int.from_bytes(raw, "little")
    return {
        "route": w & 0xFFFF,
        "channel": BusChannel((w >> 16) & 0x7),
        "last": bool((w >> 19) & 1),
        "beat": (w >> 20) & 0xFF,
        "src_master": (w >> 28) & 0xFF,
        "src_node": (w >> 36) & 0xFF,
        "txn_id": (w >> 44) & 0xFFFFF,
    }


class MemoryMap:
    """Address-ordered, disjoint (region, endpoint) pairs."""

    def __init__(self, entries=()):
        self._bases: list[int] = []
        self._items: list[tuple[AddressRegion, object]] = []
        for region, endpoint in entries:
            self.add(region, endpoint)

    def add(self, region: AddressRegion, endpoint) -> None:
        i = bisect.bisect_left(self._bases, region.base)
        for j in (i - 1, i):
            if 0 <= j < len(self._items) and self._items[j][0].overlaps(region):
                raise ConfigError(f"region {region} overlaps {self._items[j][0]}")
        self._bases.insert(i, region.base)
        self._items.insert(i, (region, endpoint))

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def lookup(self, addr: int):
        i = bisect.bisect_right(self._bases, addr) - 1
        if i >= 0:
            region, endpoint = self._items[i]
            if region.contains(addr):
                return endpoint
        return None

    def region_of(self, addr: int) -> AddressRegion | None:
        i = bisect.bisect_right(self._bases, addr) - 1
        if i >= 0 and self._items[i][0].contains(addr):
            return self._items[i][0]
        return None

    def resolve(self, addr: int, size: int):
        i = bisect.bisect_right(self._bases, addr) - 1
        if i >= 0:
            region, endpoint = self._items[i]
            if region.contains_range(addr, size):
                return endpoint
        raise UnmappedAddress(f"[{addr:#x}, {addr + size:#x}) is not inside one mapped region")


def decompose(txn: Transaction, memory_map: MemoryMap | None = None) -> list[Flit]:
    if memory_map is not None:
        memory_map.resolve(txn.addr, txn.nbytes)
    if txn.kind == Kind.READ:
        return [Flit(BusChannel.READ_REQ, txn.master, txn.txn_id, 0, 0, True,
                     src_node=txn.node, addr=txn.addr, burst_len=txn.burst_len, txn=txn)]
    flits = [Flit(BusChannel.WRITE_REQ, txn.master, txn.txn_id, 0, 0, False,
                  src_node=txn.node, addr=txn.addr, burst_len=txn.burst_len, txn=txn)]
    n = txn.burst_len
    for beat in range(n):
        flits.append(Flit(BusChannel.WRITE_DATA, txn.master, txn.txn_id, beat, txn.beat_size,
                          beat == n - 1, src_node=txn.node, burst_len=n, txn=txn))
    return flits


@dataclass(frozen=True)
class Completion:
    txn_id: int
    master: int
    kind: Kind
    issue_time: int
    done_time: int
    nbytes: int
    error: bool = False

    @property
    def latency(self) -> int:
        return self.done_time - self.issue_time


def complete(txn: Transaction, responses, error: bool = False) -> Completion:
    """Close a transaction from its ``(arrival_time, flit)`` responses."""
    if not responses:
        raise ProtocolViolation(f"txn {txn.txn_id}: no response flits")
    for _, f in responses:
        if f.txn_id != txn.txn_id or f.src_master != txn.master:
            raise ProtocolViolation(f"txn {txn.txn_id}: foreign response flit (txn {f.txn_id})")
    chans = [f.channel for _, f in responses]
    if txn.kind == Kind.READ:
        if any(c != BusChannel.READ_DATA for c in chans) or len(chans) != txn.burst_len:
            raise ProtocolViolation(
                f"txn {txn.txn_id}: READ needs {txn.burst_len} READ_DATA flits, got {len(chans)}")
    elif chans != [BusChannel.WRITE_RESP]:
        raise ProtocolViolation(f"txn {txn.txn_id}: WRITE needs exactly 1 WRITE_RESP, got {len(chans)}")
    done = max(t for t, _ in responses)
    return Completion(txn.txn_id, txn.master, txn.kind, txn.issue_time, done, txn.nbytes, error)


@dataclass(frozen=True)
class LocalMemoryModel:
    latency_ns: float = 60.0
    bandwidth: float = 1060 * 2**20  # bytes/s per port
    max_outstanding: int = 16

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ConfigError("slave bandwidth must be > 0")
        if self.latency_ns < 0:
            raise ConfigError("slave latency must be >= 0")
        if self.max_outstanding < 1:
            raise ConfigError("slave outstanding limit must be >= 1")

    def transfer_ps(self, nbytes: int) -> int:
        return int(round(nbytes * 1e12 / self.bandwidth))


@dataclass
class _Request:
    head: Flit
    nbytes: int
    ready: int
    beats_seen: int = 0


@dataclass
class SlaveStats:
    requests: int = 0
    flits_in: int = 0
    flits_out: int = 0
    bytes_served: int = 0
    max_queue: int = 0
    window_stall_ps: int = 0


class MemorySlave:
    """One slave port backed by a :class:`LocalMemoryModel`.

    Requests are served FIFO; a request may start once the port's bandwidth
    pipe is free and fewer than ``max_outstanding`` responses are pending.
    Its response is emitted ``latency`` after the start.
    """

    def __init__(self, sim: Simulator, model: LocalMemoryModel, region: AddressRegion,
                 respond, name: str = "slave"):
        self.sim = sim
        self.model = model
        self.region = region
        self.respond = respond
        self.name = name
        self.latency = ns(model.latency_ns)
        self.queue: deque[_Request] = deque()
        self.open_writes: dict[tuple, _Request] = {}
        self.outstanding = 0
        self.busy_until = 0
        self._wake = None
        self.stats = SlaveStats()

    def accept(self, f: Flit) -> None:
        self.stats.flits_in += 1
        ch = f.channel
        if ch == BusChannel.READ_REQ:
            self._check(f)
            self._enqueue(_Request(f, f.burst_len * (f.txn.beat_size if f.txn else 8), self.sim.now))
        elif ch == BusChannel.WRITE_REQ:
            self._check(f)
            self.open_writes[(f.src_node, f.src_master, f.txn_id)] = _Request(f, 0, 0)
        elif ch == BusChannel.WRITE_DATA:
            key = (f.src_node, f.src_master, f.txn_id)
            req = self.open_writes.get(key)
            if req is None:
                raise ProtocolViolation(f"{self.name}: WRITE_DATA for unknown txn {f.txn_id}")
            req.beats_seen += 1
            req.nbytes += f.payload
            if f.last:
                if req.beats_seen != req.head.burst_len:
                    raise ProtocolViolation(f"{self.name}: txn {f.txn_id} got {req.beats_seen} beats")
                del self.open_writes[key]
                req.ready = self.sim.now
                self._enqueue(req)
        else:
            raise ProtocolViolation(f"{self.name}: response flit on a slave port")

    def _check(self, f: Flit) -> None:
        nbytes = f.burst_len * (f.txn.beat_size if f.txn else 8)
        if not self.region.contains_range(f.addr, nbytes):
            raise UnmappedAddress(f"{self.name}: {f.addr:#x} outside {self.region}")

    def _enqueue(self, req: _Request) -> None:
        self.stats.requests += 1
        self.queue.append(req)
        if len(self.queue) > self.stats.max_queue:
            self.stats.max_queue = len(self.queue)
        self._kick()

    def _kick(self) -> None:
        now = self.sim.now
        while self.queue and self.outstanding < self.model.max_outstanding:
            if self.busy_until > now:
                if self._wake is None or not self._wake.pending:
                    self._wake = self.sim.at(self.busy_until, self._kick, priority=PRIO_SERVICE)
                return
            req = self.queue.popleft()
            self.outstanding += 1
            self.busy_until = now + self.model.transfer_ps(req.nbytes)
            self.sim.post(now + self.latency, self._finish, req, priority=PRIO_SERVICE)

    def _finish(self, req: _Request) -> None:
        self.outstanding -= 1
        head = req.head
        self.stats.bytes_served += req.nbytes
        if head.channel == BusChannel.READ_REQ:
            beat = head.txn.beat_size if head.txn else 8
            n = head.burst_len
            out = [Flit(BusChannel.READ_DATA, head.src_master, head.txn_id, i, beat, i == n - 1,
                        route=head.route, src_node=head.src_node, burst_len=n, txn=head.txn,
                        xcvr=head.xcvr, entry=head.entry)
                   for i in range(n)]
        else:
            out = [Flit(BusChannel.WRITE_RESP, head.src_master, head.txn_id, 0, 0, True,
                        route=head.route, src_node=head.src_node, burst_len=head.burst_len,
                        txn=head.txn, xcvr=head.xcvr, entry=head.entry)]
        self.stats.flits_out += len(out)
        self.respond(out)
        self._kick()
