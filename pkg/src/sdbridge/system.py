"""Nodes, bus masters and the assembled multi-node system."""

from __future__ import annotations

from dataclasses import dataclass, field

from .bridge import CONTROL_APERTURE_SIZE, Bridge, BridgeConfig, SerdesLink
from .bus import (AddressRegion, Completion, Kind, LocalMemoryModel, MemoryMap,
                  MemorySlave, Transaction, complete, decompose)
from .errors import ConfigError, UnmappedAddress
from .fabric import CircuitSwitch, Topology
from .sim import ClockDomain, Simulator


class _Pending:
    __slots__ = ("txn", "responses", "callback", "remote")

    def __init__(self, txn, callback, remote):
        self.txn = txn
        self.responses = []
        self.callback = callback
        self.remote = remote


class BusMaster:
    """A bus master with split read/write channels. Completions are reported
    through the per-transaction callback."""

    def __init__(self, sim: Simulator, node: "Node", master_id: int):
        self.sim = sim
        self.node = node
        self.id = master_id
        self.outstanding: dict[int, _Pending] = {}
        self._next = 0
        self.issued = 0
        self.completed = 0
        self.errors = 0

    def issue(self, kind: Kind, addr: int, beat_size: int, burst_len: int, callback=None) -> Transaction:
        txn = Transaction(self._next, self.id, kind, addr, beat_size, burst_len, self.sim.now, self.node.id)
        self._next = (self._next + 1) & 0xFFFFF
        target = self.node.decode(addr, txn.nbytes)
        self.outstanding[txn.txn_id] = _Pending(txn, callback, target is self.node.bridge)
        self.issued += 1
        for f in decompose(txn):
            if target is self.node.bridge:
                target.submit(self.id, f)
            else:
                target.accept(self.id, f)
        return txn

    def on_response(self, f) -> None:
        p = self.outstanding.get(f.txn_id)
        if p is None:
            from .errors import ProtocolViolation
            raise ProtocolViolation(f"master {self.id}: response for unknown txn {f.txn_id}")
        p.responses.append((self.sim.now, f))
        txn = p.txn
        if txn.kind == Kind.READ and len(p.responses) < txn.burst_len:
            return
        del self.outstanding[f.txn_id]
        c = complete(txn, p.responses)
        if p.remote:
            self.node.bridge.retire(f)
        self.completed += 1
        if p.callback is not None:
            p.callback(c)

    def decode_error(self, txn: Transaction) -> None:
        p = self.outstanding.pop(txn.txn_id, None)
        if p is None:
            return
        self.errors += 1
        c = Completion(txn.txn_id, txn.master, txn.kind, txn.issue_time, self.sim.now, 0, error=True)
        if p.callback is not None:
            p.callback(c)

    def pending_in(self, region: AddressRegion) -> int:
        return sum(1 for p in self.outstanding.values()
                   if p.remote and region.contains_range(p.txn.addr, p.txn.nbytes))


class LocalMemory:
    """A multi-port memory controller; master ``i`` is served by port ``i % ports``."""

    def __init__(self, sim: Simulator, node: "Node", region: AddressRegion, model: LocalMemoryModel,
                 ports: int = 1):
        self.region = region
        self.node = node
        self.ports = [MemorySlave(sim, model, region, self._respond, f"node{node.id}.ddr{i}")
                      for i in range(ports)]

    def accept(self, master: int, f) -> None:
        self.ports[master % len(self.ports)].accept(f)

    def _respond(self, flits) -> None:
        for f in flits:
            self.node.masters[f.src_master].on_response(f)


@dataclass
class SlaveSpec:
    port: int
    region: AddressRegion
    model: LocalMemoryModel = field(default_factory=LocalMemoryModel)


class Node:
    def __init__(self, sim: Simulator, node_id: int, role: str, clock: ClockDomain,
                 bridge_cfg: BridgeConfig | None = None, aperture: AddressRegion | None = None,
                 control_base: int = 0xA000_0000, name: str | None = None):
        if role not in ("compute", "memory"):
            raise ConfigError(f"node {node_id}: unknown role {role!r}")
        self.sim = sim
        self.id = node_id
        self.name = name or f"{role}{node_id}"
        self.role = role
        self.clock = clock
        self.bus = MemoryMap()
        self.masters: dict[int, BusMaster] = {}
        self.local: LocalMemory | None = None
        self.slaves: dict[int, MemorySlave] = {}
        self.slave_specs: dict[int, SlaveSpec] = {}
        self.aperture = aperture
        self.control = AddressRegion(control_base, CONTROL_APERTURE_SIZE)
        self.bridge = Bridge(sim, node_id, clock, bridge_cfg, aperture)
        self.bridge.on_decode_error = lambda txn: self.masters[txn.master].decode_error(txn)
        self.bus.add(self.control, "control")
        if aperture is not None:
            self.bus.add(aperture, self.bridge)

    def add_master(self, master_id: int) -> BusMaster:
        if master_id in self.masters:
            raise ConfigError(f"node {self.id}: duplicate master {master_id}")
        m = BusMaster(self.sim, self, master_id)
        self.masters[master_id] = m
        self.bridge.add_master(master_id, m.on_response)
        return m

    def set_local_memory(self, region: AddressRegion, model: LocalMemoryModel, ports: int = 1) -> None:
        self.local = LocalMemory(self.sim, self, region, model, ports)
        self.bus.add(region, self.local)

    def add_slave(self, spec: SlaveSpec) -> MemorySlave:
        if spec.port in self.slaves:
            raise ConfigError(f"node {self.id}: duplicate slave port {spec.port}")
        bridge = self.bridge
        port = spec.port
        slave = MemorySlave(self.sim, spec.model, spec.region,
                            lambda flits: bridge.respond(port, flits), f"node{self.id}.slave{port}")
        self.slaves[port] = slave
        self.slave_specs[port] = spec
        bridge.add_slave(port, slave.accept)
        return slave

    def add_transceiver(self, link: SerdesLink):
        return self.bridge.add_transceiver(link)

    def decode(self, addr: int, nbytes: int):
        target = self.bus.resolve(addr, nbytes)
        if target == "control":
            raise UnmappedAddress(f"{addr:#x}: control aperture takes register writes only")
        return target

    def exported_regions(self) -> list[AddressRegion]:
        return sorted({s.region for s in self.slave_specs.values()})


class System:
    def __init__(self, sim: Simulator):
        self.sim = sim
        self.nodes: dict[int, Node] = {}
        self.topology = Topology()
        self.links: list[tuple[tuple, tuple, SerdesLink]] = []

    def add_node(self, node: Node) -> Node:
        if node.id in self.nodes:
            raise ConfigError(f"duplicate node id {node.id}")
        self.nodes[node.id] = node
        return node

    def add_switch(self, sw: CircuitSwitch) -> None:
        self.topology.add_switch(sw)

    def wire(self, a: tuple, b: tuple, latency_ns: float = 0.0) -> None:
        self.topology.connect(a, b, latency_ns)

    def add_transceiver(self, node_id: int, link: SerdesLink):
        x = self.nodes[node_id].add_transceiver(link)
        self.topology.add_transceiver(node_id, x.index, x)
        return x

    def finalize(self) -> None:
        self.topology.bind()

    def transceivers(self):
        for node in self.nodes.values():
            yield from node.bridge.xcvrs

    def in_flight_flits(self) -> int:
        return sum(x.in_flight for x in self.transceivers())


def build_two_node(sim: Simulator, *, bus_hz: float = 167.5e6, bridge_cfg: BridgeConfig | None = None,
                   link: SerdesLink | None = None, masters: int = 4,
                   local_model: LocalMemoryModel | None = None, remote_model: LocalMemoryModel | None = None,
                   local_ports: int = 4, remote_ports: int = 2, links: int = 1,
                   aperture: AddressRegion = AddressRegion(0x4_0000_0000, 448 << 30),
                   local_region: AddressRegion = AddressRegion(0x0, 2 << 30),
                   remote_region: AddressRegion = AddressRegion(0x8_0000_0000, 2 << 30)) -> System:
    """Compute node 0 wired directly to memory node 1."""
    clock = ClockDomain("bus", bus_hz)
    cfg = bridge_cfg or BridgeConfig()
    link = link or SerdesLink()
    system = System(sim)
    cn = system.add_node(Node(sim, 0, "compute", clock, cfg, aperture))
    mn = system.add_node(Node(sim, 1, "memory", clock, cfg))
    for m in range(masters):
        cn.add_master(m)
    cn.set_local_memory(local_region, local_model or LocalMemoryModel(), local_ports)
    for p in range(remote_ports):
        mn.add_slave(SlaveSpec(p, remote_region, remote_model or local_model or LocalMemoryModel()))
    for i in range(links):
        system.add_transceiver(0, link)
        system.add_transceiver(1, link)
        system.wire(("x", 0, i), ("x", 1, i))
    system.finalize()
    return system
