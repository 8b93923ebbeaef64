"""The bridge datapath.

Masters' bus channels are time-multiplexed into one flit stream per master
port, steered through the master's memport table, rate limited, arbitrated
round-robin onto a transceiver's egress pipeline and edge buffer, then pulled
by the serDES. On the far side flits cross into the bus clock domain, pass the
ingress pipeline and are demultiplexed per egress port, round-robin over
source flows. Responses take the mirrored path back.
"""

from __future__ import annotations

import bisect
from collections import deque
from dataclasses import dataclass, field

from .bus import (ADDR_MASK, AddressRegion, BusChannel, Flit, make_route)
from .errors import (BadSlot, ConfigError, NoRoute, Overflow, UnknownDestination)
from .sim import (PRIO_ARRIVE, PRIO_SERVICE, PRIO_TICK, ClockDomain, Simulator, ns)

FOREVER = 2**63

# memport control registers (per slot), relative to the slot base
REG_BASE = 0x00
REG_SIZE = 0x08
REG_OFFSET = 0x10
REG_DEST = 0x18
REG_FLAGS = 0x20
SLOT_STRIDE = 0x40
MASTER_STRIDE = 0x1000
FLAG_ENABLE = 0x1
CONTROL_APERTURE_SIZE = 0x10_0000


def pack_dest(xcvr: int, port: int, node: int) -> int:
    """bits 0-7 transceiver, 8-15 destination slave port, 16-23 destination node."""
    return (xcvr & 0xFF) | (port & 0xFF) << 8 | (node & 0xFF) << 16


def unpack_dest(word: int) -> tuple[int, int, int]:
    return word & 0xFF, (word >> 8) & 0xFF, (word >> 16) & 0xFF


def _signed64(v: int) -> int:
    v &= ADDR_MASK
    return v - (1 << 64) if v >> 63 else v


@dataclass(frozen=True)
class MemportEntry:
    region: AddressRegion
    offset: int
    xcvr: int
    dest_node: int
    dest_port: int
    enabled: bool = True

    def translate(self, addr: int) -> int:
        return addr + self.offset

    @property
    def remote_region(self) -> AddressRegion:
        return AddressRegion(self.region.base + self.offset, self.region.size)

    @property
    def route(self) -> int:
        return make_route(self.dest_node, self.dest_port)

    def registers(self) -> list[tuple[int, int]]:
        return [
            (REG_BASE, self.region.base),
            (REG_SIZE, self.region.size),
            (REG_OFFSET, self.offset & ADDR_MASK),
            (REG_DEST, pack_dest(self.xcvr, self.dest_port, self.dest_node)),
            (REG_FLAGS, FLAG_ENABLE if self.enabled else 0),
        ]

    @classmethod
    def from_registers(cls, regs: dict[int, int]) -> "MemportEntry":
        xcvr, port, node = unpack_dest(regs.get(REG_DEST, 0))
        return cls(AddressRegion(regs[REG_BASE], regs[REG_SIZE]), _signed64(regs.get(REG_OFFSET, 0)),
                   xcvr, node, port, bool(regs.get(REG_FLAGS, 0) & FLAG_ENABLE))


def translate(entry: MemportEntry, addr: int) -> int:
    return entry.translate(addr)


@dataclass(frozen=True)
class RateLimiterConfig:
    rate: float  # bytes/s
    depth: int  # bytes

    def validate(self, max_flit: int) -> None:
        if self.rate < 0:
            raise ConfigError("rate limit must be >= 0")
        if self.depth < max_flit:
            raise ConfigError(f"bucket depth {self.depth} B is below the maximum flit payload {max_flit} B")


class TokenBucket:
    """Token bucket in bytes; ``admit`` returns the time a flit may pass.

    A return value equal to ``now`` means the flit was admitted and its tokens
    consumed; anything later is a stall with nothing consumed. Rate 0 blocks
    for ever.
    """

    def __init__(self, config: RateLimiterConfig, now: int = 0):
        self.config = config
        self.tokens = float(config.depth)
        self.last = now
        self.admitted_bytes = 0

    def _refill(self, now: int) -> None:
        if now > self.last:
            self.tokens = min(float(self.config.depth),
                              self.tokens + self.config.rate * (now - self.last) * 1e-12)
            self.last = now

    def admit(self, nbytes: int, now: int) -> int:
        if self.config.rate <= 0:
            return FOREVER
        self._refill(now)
        if self.tokens + 1e-9 >= nbytes:
            self.tokens -= nbytes
            self.admitted_bytes += nbytes
            return now
        need = nbytes - self.tokens
        return now + max(1, -int(-need * 1e12 // self.config.rate))

    def reconfigure(self, config: RateLimiterConfig, now: int) -> None:
        self._refill(now)
        self.config = config
        self.tokens = min(self.tokens, float(config.depth))


def rate_admit(bucket: TokenBucket, flit: Flit, now: int) -> int:
    return bucket.admit(flit.payload, now)


class EdgeBuffer:
    def __init__(self, capacity: int = 64, threshold: int | None = None):
        if threshold is None:
            threshold = capacity
        if not 0 < threshold <= capacity:
            raise ConfigError(f"edge buffer threshold {threshold} must be in (0, {capacity}]")
        self.capacity = capacity
        self.threshold = threshold
        self.q: deque[Flit] = deque()
        self.max_occupancy = 0
        self.pushed = 0

    @property
    def occupancy(self) -> int:
        return len(self.q)

    @property
    def backpressure(self) -> bool:
        return len(self.q) >= self.threshold

    def __len__(self):
        return len(self.q)

    def push(self, f: Flit) -> None:
        if len(self.q) >= self.capacity:
            raise Overflow(f"edge buffer push at occupancy {len(self.q)} = capacity")
        self.q.append(f)
        self.pushed += 1
        if len(self.q) > self.max_occupancy:
            self.max_occupancy = len(self.q)

    def pop(self) -> Flit:
        return self.q.popleft()

    def peek(self) -> Flit:
        return self.q[0]


def edge_push(buf: EdgeBuffer, f: Flit) -> None:
    buf.push(f)


def edge_pop(buf: EdgeBuffer) -> Flit:
    return buf.pop()


@dataclass(frozen=True)
class SerdesLink:
    line_rate: float = 10e9  # bits/s
    payload_rate: float | None = None  # bytes/s; default line_rate / 8
    latency_ns: float = 0.0
    header_bits: int = 64
    clock: ClockDomain = field(default_factory=lambda: ClockDomain("xcvr", 156.25e6))

    def __post_init__(self):
        if self.payload_rate is None:
            object.__setattr__(self, "payload_rate", self.line_rate / 8)
        if self.line_rate < 0 or self.payload_rate < 0:
            raise ConfigError("link rates must be >= 0")
        if self.header_bits < 0 or self.latency_ns < 0:
            raise ConfigError("link header and latency must be >= 0")
        object.__setattr__(self, "_latency_ps", ns(self.latency_ns))
        object.__setattr__(self, "_ser", {})

    @property
    def strict(self) -> bool:
        return self.payload_rate <= self.line_rate / 8 * (1 + 1e-12)

    @property
    def latency_ps(self) -> int:
        return self._latency_ps

    def serialization_ps(self, payload: int) -> int | None:
        """Pipe occupancy of one flit; ``None`` when the link cannot move it."""
        try:
            return self._ser[payload]
        except KeyError:
            t = self._ser[payload] = self._serialization(payload)
            return t

    def _serialization(self, payload: int) -> int | None:
        t = 0.0
        if payload:
            if self.payload_rate <= 0:
                return None
            t += payload * 1e12 / self.payload_rate
        if self.header_bits:
            if self.line_rate <= 0:
                return None
            t += self.header_bits * 1e12 / self.line_rate
        return int(round(t))


def serdes_transmit(link: SerdesLink, flit: Flit, now: int, free_at: int = 0,
                    extra_latency: int = 0) -> tuple[int, int] | None:
    """Start and arrival time of ``flit`` on a pipe that frees at ``free_at``.

    Returns ``(pipe_free_again, arrival)`` or ``None`` if the link is stalled.
    """
    ser = link.serialization_ps(flit.payload)
    if ser is None:
        return None
    start = max(now, free_at)
    end = start + ser
    return end, end + link._latency_ps + extra_latency


class ChannelMux:
    """Per-cycle round robin over the five bus channels with a persistent pointer."""

    def __init__(self):
        self.queues: list[deque[Flit]] = [deque() for _ in BusChannel]
        self.ptr = 0
        self.count = 0

    def push(self, f: Flit) -> None:
        self.queues[f.channel].append(f)
        self.count += 1

    def __len__(self):
        return self.count

    def candidate(self, eligible=None) -> int | None:
        """Channel the next :meth:`take` would serve, or None."""
        if not self.count:
            return None
        qs = self.queues
        for k in range(5):
            c = (self.ptr + k) % 5
            q = qs[c]
            if q and (eligible is None or eligible(q[0])):
                return c
        return None

    def take(self, c: int) -> Flit:
        self.ptr = (c + 1) % 5
        self.count -= 1
        return self.queues[c].popleft()

    def select(self, backpressure: bool = False, eligible=None) -> Flit | None:
        if backpressure:
            return None
        c = self.candidate(eligible)
        return None if c is None else self.take(c)


def multiplex(mux: ChannelMux, backpressure: bool = False) -> Flit | None:
    return mux.select(backpressure)


class MemportTable:
    def __init__(self, master: int, capacity: int = 16, aperture: AddressRegion | None = None,
                 limiter: RateLimiterConfig | None = None):
        self.master = master
        self.capacity = capacity
        self.aperture = aperture
        self.limiter = limiter
        self.slots: list[MemportEntry | None] = [None] * capacity
        self.shadow: list[dict[int, int]] = [{} for _ in range(capacity)]
        self._bases: list[int] = []
        self._ends: list[int] = []
        self._index: list[tuple[int, MemportEntry]] = []

    def set_slot(self, slot: int, entry: MemportEntry | None) -> None:
        if not 0 <= slot < self.capacity:
            raise BadSlot(f"slot {slot} out of range (capacity {self.capacity})")
        if entry is not None and entry.enabled:
            if self.aperture is not None and not entry.region.within(self.aperture):
                raise ConfigError(f"memport region {entry.region} outside bridge aperture {self.aperture}")
            for i, other in enumerate(self.slots):
                if i != slot and other is not None and other.enabled and other.region.overlaps(entry.region):
                    raise ConfigError(f"memport slot {slot} region {entry.region} overlaps slot {i}")
        self.slots[slot] = entry
        self._reindex()

    def _reindex(self) -> None:
        live = sorted((e.region.base, i, e) for i, e in enumerate(self.slots) if e is not None and e.enabled)
        self._bases = [b for b, _, _ in live]
        self._ends = [e.region.end for _, _, e in live]
        self._index = [(i, e) for _, i, e in live]

    def entries(self):
        return [(i, e) for i, e in enumerate(self.slots) if e is not None]

    def find(self, addr: int) -> tuple[int, MemportEntry] | None:
        """``(slot, entry)`` of the enabled entry covering ``addr``, or None."""
        i = bisect.bisect_right(self._bases, addr) - 1
        if i >= 0 and addr < self._ends[i]:
            return self._index[i]
        return None

    def lookup(self, addr: int) -> tuple[int, MemportEntry]:
        hit = self.find(addr)
        if hit is not None:
            return hit
        raise NoRoute(f"master {self.master}: no enabled memport entry for {addr:#x}")


def lookup(table: MemportTable, addr: int) -> MemportEntry:
    return table.lookup(addr)[1]


def steer(entry: MemportEntry, flit: Flit) -> Flit:
    flit.route = entry.route
    if flit.channel in (BusChannel.READ_REQ, BusChannel.WRITE_REQ):
        flit.addr = entry.translate(flit.addr)
    flit.xcvr = entry.xcvr
    return flit


@dataclass
class BridgeConfig:
    egress_cycles: int = 34
    ingress_cycles: int = 33
    edge_capacity: int = 64
    edge_threshold: int | None = None  # default: capacity - egress pipeline depth
    memport_slots: int = 16
    max_flit_bytes: int = 64
    backpressure: bool = True

    def threshold(self) -> int:
        if self.edge_threshold is not None:
            return self.edge_threshold
        return max(1, self.edge_capacity - self.egress_cycles)


class Port:
    """Bridge ingress for one bus master (requests) or one slave port (responses)."""

    __slots__ = ("key", "is_master", "mux", "out", "out_xcvr", "stall_until", "bucket",
                 "table", "open_writes", "injected", "stall_ps", "stall_cause", "_stall_from")

    def __init__(self, key, is_master: bool, table: MemportTable | None = None):
        self.key = key
        self.is_master = is_master
        self.mux = ChannelMux()
        self.out: Flit | None = None
        self.out_xcvr = -1
        self.stall_until = 0
        self.bucket: TokenBucket | None = None
        self.table = table
        self.open_writes: dict[int, tuple] = {}
        self.injected = 0
        self.stall_ps = {"rate": 0, "backpressure": 0}
        self.stall_cause = None
        self._stall_from = 0


class Transceiver:
    """serDES endpoint. Pulls from its edge buffer whenever the pipe it shares
    with its current peer is free.

    A blocked transceiver parks itself on the transceiver holding the pipe.
    The single end-of-transmission event offers the pipe to the sender
    first (exhaustive service), then to the peer and any parked waiters.
    """

    def __init__(self, sim: Simulator, bridge: "Bridge", index: int, link: SerdesLink, edge: EdgeBuffer):
        self.sim = sim
        self.bridge = bridge
        self.index = index
        self.link = link
        self.edge = edge
        self.resolve = None  # fn(now) -> (peer Transceiver, extra latency ps); set by the fabric
        self.busy_until = 0
        self.busy_ps = 0
        self.pipe_busy_ps = 0  # shared pipe occupancy, counting the peer's transmissions too
        self.waiters: list[Transceiver] = []
        self.tx_flits = 0
        self.tx_bytes = 0
        self.rx_flits = 0
        self.rx_bytes = 0
        self.in_flight = 0  # sent, not yet through the receiver's ingress pipeline
        self.tap = None  # optional fn(flit, t) called per transmitted flit

    @property
    def key(self):
        return (self.bridge.node_id, self.index)

    def _park(self, holder: "Transceiver") -> None:
        if self not in holder.waiters:
            holder.waiters.append(self)

    def _pipe_free(self, peer: "Transceiver") -> None:
        # exhaustive service: the sender keeps the pipe while it has flits
        woken = [self, peer]
        for w in self.waiters + peer.waiters:
            if w not in woken:
                woken.append(w)
        self.waiters.clear()
        peer.waiters.clear()
        for w in woken:
            if w.edge.q:
                w.kick()

    def kick(self) -> None:
        sim = self.sim
        q = self.edge.q
        while q:
            now = sim.now
            if self.busy_until > now:
                self._park(self)
                return
            peer, extra = self.resolve(now)
            if peer.busy_until > now:
                self._park(peer)
                return
            f = q[0]
            res = serdes_transmit(self.link, f, now, now, extra)
            if res is None:
                return
            end, arrival = res
            q.popleft()
            self.busy_until = peer.busy_until = end
            dt = end - now
            self.busy_ps += dt
            self.pipe_busy_ps += dt
            peer.pipe_busy_ps += dt
            self.tx_flits += 1
            self.tx_bytes += f.payload
            self.in_flight += 1
            if self.tap is not None:
                self.tap(f, now)
            rb = peer.bridge
            n = rb.clock.cycle_at(arrival) + rb.cfg.ingress_cycles
            sim.post(rb.clock.edge(n), peer.receive, f, self, n, priority=PRIO_ARRIVE)
            self.bridge.edge_popped(self)
            if dt:
                sim.post(end, self._pipe_free, peer, priority=PRIO_SERVICE)
                return

    def receive(self, f: Flit, src: "Transceiver", n: int) -> None:
        src.in_flight -= 1
        self.rx_flits += 1
        self.rx_bytes += f.payload
        self.bridge._demux_in(f, self.index, n)


@dataclass
class BridgeStats:
    decode_errors: int = 0
    delivered_local: int = 0
    register_writes: int = 0
    ticks: int = 0


class Bridge:
    def __init__(self, sim: Simulator, node_id: int, clock: ClockDomain, config: BridgeConfig | None = None,
                 aperture: AddressRegion | None = None):
        self.sim = sim
        self.node_id = node_id
        self.clock = clock
        self.cfg = config or BridgeConfig()
        self.aperture = aperture
        self.ports: list[Port] = []
        self.master_ports: dict[int, Port] = {}
        self.slave_ports: dict[int, Port] = {}
        self.xcvrs: list[Transceiver] = []
        self._xrr: list[int] = []
        self.slave_sinks: dict[int, object] = {}
        self.master_sinks: dict[int, object] = {}
        self.on_decode_error = None  # fn(txn) for NoRoute completions
        self.on_activate = None
        self._demux: dict[int, dict] = {}  # egress key -> {source: deque}
        self._demux_rr: dict[int, int] = {}
        self._demux_n = 0
        self._regq: deque = deque()
        self._tick_cycle = -1
        self._last_cycle = -1
        self._served: dict = {}
        self.inflight: dict[tuple, int] = {}
        self.pipeline = 0
        self.stats = BridgeStats()

    # construction
    def add_master(self, master: int, sink) -> MemportTable:
        table = MemportTable(master, self.cfg.memport_slots, self.aperture)
        p = Port(("m", master), True, table)
        self.ports.append(p)
        self.master_ports[master] = p
        self.master_sinks[master] = sink
        return table

    def add_slave(self, port_id: int, sink) -> None:
        p = Port(("s", port_id), False)
        self.ports.append(p)
        self.slave_ports[port_id] = p
        self.slave_sinks[port_id] = sink

    def add_transceiver(self, link: SerdesLink) -> Transceiver:
        edge = EdgeBuffer(self.cfg.edge_capacity, self.cfg.threshold())
        x = Transceiver(self.sim, self, len(self.xcvrs), link, edge)
        self.xcvrs.append(x)
        self._xrr.append(0)
        return x

    def table(self, master: int) -> MemportTable:
        return self.master_ports[master].table

    # rate limiting
    def set_rate_limit(self, master: int, config: RateLimiterConfig | None) -> int:
        """Schedule a limiter change for the next bus cycle; returns its effective time."""
        if config is not None:
            config.validate(self.cfg.max_flit_bytes)
        t = self.clock.next_edge(self.sim.now + 1)
        self.sim.at(t, self._apply_limit, master, config, priority=PRIO_ARRIVE)
        return t

    def _apply_limit(self, master: int, config: RateLimiterConfig | None) -> None:
        p = self.master_ports[master]
        p.table.limiter = config
        if config is None:
            p.bucket = None
        elif p.bucket is None:
            p.bucket = TokenBucket(config, self.sim.now)
        else:
            p.bucket.reconfigure(config, self.sim.now)
        p.stall_until = 0
        self._ensure_tick(self.sim.now)

    # in-band register programming
    def write_reg(self, offset: int, value: int, done=None) -> None:
        """Queue one 64-bit write into the control aperture (offset from its base)."""
        self._regq.append((offset, value, done))
        self._ensure_tick(self.sim.now)

    def _apply_reg(self, offset: int, value: int, done) -> None:
        master, rest = divmod(offset, MASTER_STRIDE)
        slot, reg = divmod(rest, SLOT_STRIDE)
        port = self.master_ports.get(master)
        self.stats.register_writes += 1
        if port is None:
            raise BadSlot(f"control write to unknown master {master}")
        table = port.table
        if not 0 <= slot < table.capacity or reg > REG_FLAGS or reg % 8:
            raise BadSlot(f"control write to master {master} slot {slot} reg {reg:#x}")
        table.shadow[slot][reg] = value & ADDR_MASK
        if reg == REG_FLAGS:
            t = self.clock.edge(self._last_cycle + 1)
            self.sim.at(t, self._activate, master, slot, done, priority=PRIO_ARRIVE)
        elif done is not None:
            done(self.sim.now)

    def _activate(self, master: int, slot: int, done) -> None:
        table = self.master_ports[master].table
        regs = table.shadow[slot]
        if regs.get(REG_FLAGS, 0) & FLAG_ENABLE:
            table.set_slot(slot, MemportEntry.from_registers(regs))
        elif table.slots[slot] is not None:
            old = table.slots[slot]
            table.set_slot(slot, MemportEntry(old.region, old.offset, old.xcvr, old.dest_node,
                                              old.dest_port, False))
        if self.on_activate is not None:
            self.on_activate(master, slot)
        if done is not None:
            done(self.sim.now)

    # egress side
    def submit(self, master: int, f: Flit) -> None:
        """A master pushes a request flit onto its bus channels toward the bridge."""
        self.master_ports[master].mux.push(f)
        self._ensure_tick(self.sim.now)

    def respond(self, port_id: int, flits) -> None:
        mux = self.slave_ports[port_id].mux
        for f in flits:
            f.route = make_route(f.src_node, f.src_master)
            mux.push(f)
        self._ensure_tick(self.sim.now)

    def _ensure_tick(self, t: int) -> None:
        self._ensure_cycle(self.clock.cycle_at(t))

    def _ensure_cycle(self, n: int) -> None:
        if n <= self._last_cycle:
            n = self._last_cycle + 1
        if self._tick_cycle > self._last_cycle and self._tick_cycle <= n:
            return
        self._tick_cycle = n
        self.sim.post(self.clock.edge(n), self._tick, n, priority=PRIO_TICK)

    def edge_popped(self, x: Transceiver) -> None:
        if len(x.edge.q) == x.edge.threshold - 1:
            self._ensure_tick(self.sim.now)

    def _write_data_ready(self, port: Port):
        ow = port.open_writes
        return lambda f: f.channel != BusChannel.WRITE_DATA or f.txn_id in ow

    def _steer(self, port: Port, f: Flit) -> int | None:
        """Fill in routing for ``f``; return its transceiver, or None if dropped."""
        if not port.is_master:
            return f.xcvr
        ch = f.channel
        if ch == BusChannel.WRITE_DATA:
            slot, entry = port.open_writes[f.txn_id]
            if entry is None:  # decode error: swallow the data beats
                if f.last:
                    del port.open_writes[f.txn_id]
                return None
            if f.last:
                del port.open_writes[f.txn_id]
        else:
            hit = port.table.find(f.addr)
            if hit is None:
                self.stats.decode_errors += 1
                if ch == BusChannel.WRITE_REQ:
                    port.open_writes[f.txn_id] = (None, None)
                if self.on_decode_error is not None:
                    self.on_decode_error(f.txn)
                return None
            slot, entry = hit
            if ch == BusChannel.WRITE_REQ:
                port.open_writes[f.txn_id] = (slot, entry)
            key = (port.key[1], slot)
            self.inflight[key] = self.inflight.get(key, 0) + 1
            f.entry = key
        steer(entry, f)
        return entry.xcvr

    def _tick(self, n: int) -> None:
        sim = self.sim
        now = sim.now
        if n <= self._last_cycle:
            return
        self._last_cycle = n
        self.stats.ticks += 1
        more = False
        wake = FOREVER

        if self._regq:
            off, val, done = self._regq.popleft()
            self._apply_reg(off, val, done)
            more = more or bool(self._regq)

        if self._demux_n:
            self._demux_cycle()
            more = more or bool(self._demux_n)

        # channel mux per port
        for p in self.ports:
            if p.out is not None or not p.mux.count:
                continue
            if p.stall_until > now:
                wake = min(wake, p.stall_until)
                continue
            c = p.mux.candidate(self._write_data_ready(p) if p.is_master else None)
            if c is None:
                continue
            head = p.mux.queues[c][0]
            if p.bucket is not None:
                t = p.bucket.admit(head.payload, now)
                if t > now:
                    p.stall_until = t
                    if t < FOREVER:
                        p.stall_ps["rate"] += t - now
                    wake = min(wake, t)
                    continue
            f = p.mux.take(c)
            x = self._steer(p, f)
            if x is None:
                more = True
                continue
            if not 0 <= x < len(self.xcvrs):
                raise UnknownDestination(f"node {self.node_id}: transceiver {x} does not exist")
            p.out = f
            p.out_xcvr = x

        # transceiver arbiters: one flit per cycle each, round robin over ports
        ports = self.ports
        nports = len(ports)
        t_edge = None
        for xi, x in enumerate(self.xcvrs):
            start = self._xrr[xi]
            for k in range(nports):
                j = (start + k) % nports
                p = ports[j]
                if p.out is not None and p.out_xcvr == xi:
                    if self.cfg.backpressure and x.edge.backpressure:
                        break
                    f = p.out
                    p.out = None
                    p.injected += 1
                    if p.stall_cause is not None:
                        p.stall_ps["backpressure"] += now - p._stall_from
                        p.stall_cause = None
                    self._xrr[xi] = (j + 1) % nports
                    if t_edge is None:
                        t_edge = self.clock.edge(n + self.cfg.egress_cycles)
                    self.pipeline += 1
                    sim.post(t_edge, self._to_edge, x, f, priority=PRIO_ARRIVE)
                    break

        for p in ports:
            if p.out is not None:
                # blocked by backpressure: the edge pop re-arms the tick
                if not self.xcvrs[p.out_xcvr].edge.backpressure or not self.cfg.backpressure:
                    more = True
                elif p.stall_cause is None:
                    p.stall_cause = "backpressure"
                    p._stall_from = now
            elif p.mux.count and p.stall_until <= now:
                more = True
        if more:
            self._ensure_cycle(n + 1)
        elif wake < FOREVER:
            self._ensure_tick(wake)

    def _to_edge(self, x: Transceiver, f: Flit) -> None:
        self.pipeline -= 1
        x.edge.push(f)
        x.kick()

    # ingress side
    def _demux_in(self, f: Flit, xcvr: int, n: int | None = None) -> None:
        if f.channel.is_request:
            if f.dest_node != self.node_id or f.dest_port not in self.slave_sinks:
                raise UnknownDestination(
                    f"node {self.node_id}: routing tag names node {f.dest_node} port {f.dest_port}")
            f.xcvr = xcvr
            egress = ("s", f.dest_port)
            src = (f.src_node, f.src_master)
        else:
            if f.dest_node != self.node_id or f.src_master not in self.master_sinks:
                raise UnknownDestination(
                    f"node {self.node_id}: response for node {f.dest_node} master {f.src_master}")
            egress = ("m", f.src_master)
            src = xcvr
        flows = self._demux.get(egress)
        if flows is None:
            flows = self._demux[egress] = {}
            self._demux_rr[egress] = 0
        if n is None:
            n = self.clock.cycle_at(self.sim.now)
        if not flows and self._served.get(egress, -1) < n:
            # uncontended egress: deliver in this cycle
            self._served[egress] = n
            self._deliver(egress, f)
            return
        q = flows.get(src)
        if q is None:
            q = flows[src] = deque()
        q.append(f)
        self._demux_n += 1
        self._ensure_tick(self.sim.now)

    def _demux_cycle(self) -> None:
        for egress, flows in self._demux.items():
            if not flows:
                continue
            keys = list(flows)
            i = self._demux_rr[egress] % len(keys)
            src = keys[i]
            q = flows[src]
            f = q.popleft()
            if not q:
                del flows[src]
                self._demux_rr[egress] = i
            else:
                self._demux_rr[egress] = i + 1
            self._demux_n -= 1
            self._served[egress] = self._last_cycle
            self._deliver(egress, f)

    def _deliver(self, egress, f: Flit) -> None:
        self.stats.delivered_local += 1
        if egress[0] == "s":
            self.slave_sinks[egress[1]](f)
        else:
            self.master_sinks[egress[1]](f)

    def retire(self, f: Flit) -> None:
        """Called by the master when a transaction steered by ``f.entry`` completes."""
        key = f.entry
        if key is not None:
            left = self.inflight[key] - 1
            if left:
                self.inflight[key] = left
            else:
                del self.inflight[key]

    def arbiter_demux(self, f: Flit, xcvr: int = 0) -> None:
        self._demux_in(f, xcvr)
