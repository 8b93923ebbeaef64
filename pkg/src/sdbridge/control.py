"""Orchestration: remote segment allocation and in-band bridge programming."""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

from .bridge import (MASTER_STRIDE, REG_FLAGS, SLOT_STRIDE, MemportEntry, RateLimiterConfig)
from .bus import AddressRegion
from .errors import (BadSlot, Busy, ConfigError, NoPath, OutOfAperture, OutOfMemory)
from .system import System

MiB = 1 << 20
GiB = 1 << 30
DEFAULT_GRANULE = 2 * MiB


class FreePool:
    """Address-ordered first-fit free list with coalescing.

    ``bounds`` are the exported ranges; free blocks never merge across them,
    so an allocation always lies inside one exported range.
    """

    def __init__(self, regions, granule: int = DEFAULT_GRANULE):
        self.granule = granule
        self.bounds = sorted(regions)
        for a, b in zip(self.bounds, self.bounds[1:]):
            if a.overlaps(b):
                raise ConfigError(f"pool ranges {a} and {b} overlap")
        self.free: list[AddressRegion] = list(self.bounds)

    @property
    def total_free(self) -> int:
        return sum(r.size for r in self.free)

    def _bound_of(self, region: AddressRegion) -> AddressRegion | None:
        for b in self.bounds:
            if region.within(b):
                return b
        return None

    def allocate(self, size: int) -> AddressRegion:
        if size <= 0 or size % self.granule:
            raise ConfigError(f"size {size} must be a positive multiple of {self.granule}")
        for i, r in enumerate(self.free):
            if r.size >= size:
                got = AddressRegion(r.base, size)
                if r.size == size:
                    del self.free[i]
                else:
                    self.free[i] = AddressRegion(r.base + size, r.size - size)
                return got
        raise OutOfMemory(f"no free region of {size} bytes (largest {max((r.size for r in self.free), default=0)})")

    def release(self, region: AddressRegion) -> None:
        bound = self._bound_of(region)
        if bound is None:
            raise ConfigError(f"{region} is not inside this pool")
        for r in self.free:
            if r.overlaps(region):
                raise ConfigError(f"double free: {region} overlaps free block {r}")
        i = bisect.bisect_left(self.free, region)
        base, end = region.base, region.end
        # merge with neighbours inside the same bound
        if i > 0 and self.free[i - 1].end == base and self.free[i - 1].within(bound):
            base = self.free[i - 1].base
            i -= 1
            del self.free[i]
        if i < len(self.free) and self.free[i].base == end and self.free[i].within(bound):
            end = self.free[i].end
            del self.free[i]
        self.free.insert(i, AddressRegion(base, end - base))


@dataclass
class SegmentHandle:
    segment_id: int
    compute_node: int
    memory_node: int
    local: AddressRegion
    remote: AddressRegion
    masters: tuple
    slots: dict = field(default_factory=dict)
    xcvr: int = 0
    ready_at: int | None = None
    live: bool = True

    @property
    def offset(self) -> int:
        return self.remote.base - self.local.base

    @property
    def ready(self) -> bool:
        return self.ready_at is not None


class ControlPlane:
    def __init__(self, system: System, granule: int = DEFAULT_GRANULE):
        self.system = system
        self.sim = system.sim
        self.granule = granule
        self.pools: dict[int, FreePool] = {}
        self.apertures: dict[int, FreePool] = {}
        self.segments: dict[int, SegmentHandle] = {}
        self._next_id = 0
        self.register_writes = 0
        for nid, node in system.nodes.items():
            if node.role == "memory" and node.slave_specs:
                self.pools[nid] = FreePool(node.exported_regions(), granule)
            if node.role == "compute" and node.aperture is not None:
                self.apertures[nid] = FreePool([node.aperture], granule)

    # memport programming
    def program_memport(self, node_id: int, master: int, slot: int, entry: MemportEntry, done=None) -> None:
        """Five in-band 64-bit register writes; the entry goes live the bus cycle
        after the flags write lands. ``done(t)`` fires at activation."""
        bridge = self.system.nodes[node_id].bridge
        table = bridge.table(master)
        if not 0 <= slot < table.capacity:
            raise BadSlot(f"slot {slot} out of range (capacity {table.capacity})")
        base = master * MASTER_STRIDE + slot * SLOT_STRIDE
        regs = entry.registers()
        for i, (reg, value) in enumerate(regs):
            bridge.write_reg(base + reg, value, done if i == len(regs) - 1 else None)
        self.register_writes += len(regs)

    def _disable(self, node_id: int, master: int, slot: int, done=None) -> None:
        bridge = self.system.nodes[node_id].bridge
        bridge.write_reg(master * MASTER_STRIDE + slot * SLOT_STRIDE + REG_FLAGS, 0, done)
        self.register_writes += 1

    def _free_slot(self, node_id: int, master: int, taken) -> int:
        table = self.system.nodes[node_id].bridge.table(master)
        for i, e in enumerate(table.slots):
            if (e is None or not e.enabled) and (master, i) not in taken:
                return i
        raise BadSlot(f"node {node_id} master {master}: all {table.capacity} memport slots in use")

    def _reserved_slots(self):
        return {(m, s) for h in self.segments.values() if h.live for m, s in h.slots.items()}

    def allocate_segment(self, compute: int, memory: int, size: int, masters, on_ready=None) -> SegmentHandle:
        """Map ``size`` bytes of ``memory``'s pool into ``compute``'s bridge aperture.

        Bookkeeping is immediate and atomic; the returned handle becomes
        ``ready`` once every circuit and memport write has taken effect.
        """
        nodes = self.system.nodes
        if compute not in self.apertures:
            raise ConfigError(f"node {compute} is not a compute node with a bridge aperture")
        if memory not in self.pools:
            raise ConfigError(f"node {memory} is not a memory node")
        if size <= 0 or size % self.granule:
            raise ConfigError(f"segment size {size} must be a positive multiple of {self.granule}")
        masters = tuple(masters)
        for m in masters:
            if m not in nodes[compute].masters:
                raise ConfigError(f"node {compute} has no master {m}")
        src_x, dst_x, hops = self.system.topology.find_path(compute, memory)
        remote = self.pools[memory].allocate(size)
        try:
            local = self.apertures[compute].allocate(size)
        except OutOfMemory as exc:
            self.pools[memory].release(remote)
            raise OutOfAperture(str(exc)) from None
        taken = self._reserved_slots()
        try:
            slots = {}
            for m in masters:
                slots[m] = self._free_slot(compute, m, taken)
                taken.add((m, slots[m]))
        except BadSlot:
            self.pools[memory].release(remote)
            self.apertures[compute].release(local)
            raise

        ports = sorted(p for p, s in nodes[memory].slave_specs.items() if remote.within(s.region))
        h = SegmentHandle(self._next_id, compute, memory, local, remote, masters, slots, src_x)
        self._next_id += 1
        self.segments[h.segment_id] = h

        now = self.sim.now
        circuit_ready = self.system.topology.establish(hops, now)
        pending = [len(masters)]

        def one_done(t):
            pending[0] -= 1
            if pending[0] == 0:
                h.ready_at = t
                if on_ready is not None:
                    on_ready(h)

        def program():
            for i, m in enumerate(masters):
                port = ports[m % len(ports)]
                entry = MemportEntry(local, h.offset, src_x, memory, port, True)
                self.program_memport(compute, m, slots[m], entry, one_done)

        if not masters:
            h.ready_at = circuit_ready
        elif circuit_ready > now:
            self.sim.at(circuit_ready, program)
        else:
            program()
        return h

    def in_flight(self, h: SegmentHandle) -> int:
        node = self.system.nodes[h.compute_node]
        n = sum(node.bridge.inflight.get((m, s), 0) for m, s in h.slots.items())
        n += sum(node.masters[m].pending_in(h.local) for m in h.masters)
        return n

    def free_segment(self, h: SegmentHandle, done=None) -> None:
        if not h.live:
            raise ConfigError(f"segment {h.segment_id} already freed")
        if self.in_flight(h):
            raise Busy(f"segment {h.segment_id} has {self.in_flight(h)} transactions in flight")
        for m, s in h.slots.items():
            self._disable(h.compute_node, m, s, done)
        self.pools[h.memory_node].release(h.remote)
        self.apertures[h.compute_node].release(h.local)
        h.live = False
        del self.segments[h.segment_id]

    def set_rate_limit(self, node_id: int, master: int, config: RateLimiterConfig | None) -> int:
        return self.system.nodes[node_id].bridge.set_rate_limit(master, config)

    def run_until_ready(self, handles, limit: int = 2**62) -> int:
        """Advance the simulator until every handle is ready; returns the latest ready time."""
        sim = self.sim
        while not all(h.ready for h in handles):
            t = sim.peek()
            if t is None or t > limit:
                raise NoPath("control programming never completed")
            sim.run_until(t)
        return max((h.ready_at for h in handles), default=sim.now)

    def check_partition(self, memory_node: int) -> None:
        """Free blocks and live segments tile the exported ranges exactly."""
        pool = self.pools[memory_node]
        parts = sorted(pool.free + [h.remote for h in self.segments.values()
                                    if h.live and h.memory_node == memory_node])
        for a, b in zip(parts, parts[1:]):
            if a.overlaps(b):
                raise AssertionError(f"{a} overlaps {b}")
        covered = sum(r.size for r in parts)
        total = sum(r.size for r in pool.bounds)
        if covered != total or any(pool._bound_of(r) is None for r in parts):
            raise AssertionError(f"partition covers {covered} of {total} bytes")
