"""Circuit-switched fabric: transparent, unbuffered crossbars and cabling.

Switches never look at a flit. A port map is a partial bijection; a new map
takes effect after the switch's reconfiguration latency, and flits that
entered under the old map are unaffected.
"""

from __future__ import annotations

import bisect
import math
from collections import deque
from dataclasses import dataclass, field

from .errors import ConfigError, InvalidMap, NoCircuit, NoPath
from .sim import ns


@dataclass
class CircuitSwitch:
    switch_id: int
    ports: int
    reconfig_ns: float = 20e6  # optical-class default (20 ms)
    traversal_ns: float = 0.0
    _times: list = field(default_factory=lambda: [0], repr=False)
    _maps: list = field(default_factory=lambda: [{}], repr=False)
    listeners: list = field(default_factory=list, repr=False)  # fn() on any map change

    def __post_init__(self):
        self._traversal_ps = ns(self.traversal_ns)

    def _changed(self) -> None:
        for fn in self.listeners:
            fn()

    def validate(self, port_map: dict[int, int]) -> None:
        outs = list(port_map.values())
        if len(set(outs)) != len(outs):
            raise InvalidMap(f"switch {self.switch_id}: two inputs share an output in {port_map}")
        for p in list(port_map) + outs:
            if not 0 <= p < self.ports:
                raise InvalidMap(f"switch {self.switch_id}: port {p} out of range 0..{self.ports - 1}")

    def configure(self, port_map: dict[int, int], now: int) -> int:
        """Install ``port_map``; returns the time it becomes effective."""
        port_map = {int(k): int(v) for k, v in port_map.items()}
        self.validate(port_map)
        t = now + ns(self.reconfig_ns)
        # a later reconfiguration supersedes pending ones that are not yet effective
        i = bisect.bisect_right(self._times, t)
        del self._times[i:], self._maps[i:]
        self._times.append(t)
        self._maps.append(port_map)
        self._changed()
        return t

    def preset(self, port_map: dict[int, int]) -> None:
        """Install the map in force from time 0 (static scenario plans)."""
        port_map = {int(k): int(v) for k, v in port_map.items()}
        self.validate(port_map)
        self._times[:] = [0]
        self._maps[:] = [port_map]
        self._changed()

    def port_map(self, t: int) -> dict[int, int]:
        return self._maps[bisect.bisect_right(self._times, t) - 1]

    def next_change(self, t: int) -> float:
        """Time of the first scheduled map change after ``t`` (inf if none)."""
        i = bisect.bisect_right(self._times, t)
        return self._times[i] if i < len(self._times) else math.inf

    def latest_map(self) -> dict[int, int]:
        return self._maps[-1]

    def forward(self, in_port: int, now: int) -> tuple[int, int]:
        out = self.port_map(now).get(in_port)
        if out is None:
            raise NoCircuit(f"switch {self.switch_id}: input port {in_port} has no circuit at t={now} ps")
        return out, now + self._traversal_ps


def switch_configure(switch: CircuitSwitch, port_map: dict[int, int], now: int) -> int:
    return switch.configure(port_map, now)


def switch_forward(switch: CircuitSwitch, flit, in_port: int, now: int):
    """Deliver ``flit`` untouched at the mapped output; returns ``(flit, out_port, time)``."""
    out, t = switch.forward(in_port, now)
    return flit, out, t


class Topology:
    """Endpoints are ``("x", node, xcvr)`` transceivers or ``("p", switch, port)`` switch ports."""

    MAX_HOPS = 16

    def __init__(self):
        self.switches: dict[int, CircuitSwitch] = {}
        self.cables: dict[tuple, tuple[tuple, int]] = {}
        self.xcvrs: dict[tuple, object] = {}
        self._paths: dict[tuple, tuple] = {}  # (node, xcvr) -> (peer, extra, valid_from, valid_until)

    def add_switch(self, sw: CircuitSwitch) -> None:
        if sw.switch_id in self.switches:
            raise ConfigError(f"duplicate switch id {sw.switch_id}")
        self.switches[sw.switch_id] = sw
        sw.listeners.append(self._paths.clear)

    def add_transceiver(self, node: int, index: int, x) -> None:
        self.xcvrs[(node, index)] = x

    def connect(self, a: tuple, b: tuple, latency_ns: float = 0.0) -> None:
        for e in (a, b):
            if e in self.cables:
                raise ConfigError(f"endpoint {e} is already wired")
            if e[0] == "p":
                sw = self.switches.get(e[1])
                if sw is None or not 0 <= e[2] < sw.ports:
                    raise ConfigError(f"cable references missing switch port {e}")
            elif e[0] == "x":
                if (e[1], e[2]) not in self.xcvrs:
                    raise ConfigError(f"cable references missing transceiver {e}")
            else:
                raise ConfigError(f"bad endpoint {e}")
        lat = ns(latency_ns)
        self.cables[a] = (b, lat)
        self.cables[b] = (a, lat)

    def resolve(self, node: int, index: int, now: int):
        """Follow cables and circuits from a transceiver; returns ``(peer, extra_ps)``.

        Results are cached until the next map change of any switch on the path.
        """
        hit = self._paths.get((node, index))
        if hit is not None and hit[2] <= now < hit[3]:
            return hit[0], hit[1]
        peer, extra, until = self._walk(node, index, now)
        self._paths[(node, index)] = (peer, extra, now, until)
        return peer, extra

    def _walk(self, node: int, index: int, now: int):
        cur = ("x", node, index)
        total = 0
        t = now
        until = math.inf
        for _ in range(self.MAX_HOPS):
            nxt = self.cables.get(cur)
            if nxt is None:
                raise NoCircuit(f"endpoint {cur} is not wired")
            end, lat = nxt
            total += lat
            t += lat
            if end[0] == "x":
                return self.xcvrs[(end[1], end[2])], total, until
            sw = self.switches[end[1]]
            until = min(until, sw.next_change(t) - (t - now))
            out, t2 = sw.forward(end[2], t)
            total += t2 - t
            t = t2
            cur = ("p", end[1], out)
        raise NoCircuit(f"circuit from {(node, index)} exceeds {self.MAX_HOPS} hops")

    def bind(self) -> None:
        """Attach path resolution to every registered transceiver."""
        for (node, index), x in self.xcvrs.items():
            direct = self.cables.get(("x", node, index))
            if direct is not None and direct[0][0] == "x":
                peer = self.xcvrs[(direct[0][1], direct[0][2])]
                x.resolve = (lambda p, lat: (lambda now: (p, lat)))(peer, direct[1])
            else:
                x.resolve = (lambda n, i: (lambda now: self.resolve(n, i, now)))(node, index)

    def find_path(self, src_node: int, dst_node: int):
        """Shortest cable/switch path between two nodes.

        A switch hop ``in -> out`` is usable when both ports are free in the
        switch's latest map or already joined to each other. Returns
        ``(src_xcvr, dst_xcvr, [(switch, in, out), ...])``.
        """
        starts = sorted(i for (n, i) in self.xcvrs if n == src_node)
        for s in starts:
            # BFS from each source transceiver in index order (deterministic)
            seen = {("x", src_node, s)}
            frontier = deque([(("x", src_node, s), [])])
            while frontier:
                cur, hops = frontier.popleft()
                nxt = self.cables.get(cur)
                if nxt is None:
                    continue
                end = nxt[0]
                if end[0] == "x":
                    if end[1] == dst_node:
                        return s, end[2], hops
                    continue
                sw = self.switches[end[1]]
                m = sw.latest_map()
                taken = set(m) | set(m.values())
                for out in range(sw.ports):
                    if out == end[2]:
                        continue
                    joined = m.get(end[2]) == out and m.get(out) == end[2]
                    free = end[2] not in taken and out not in taken
                    if not (joined or free):
                        continue
                    ep = ("p", sw.switch_id, out)
                    if ep in seen or ep not in self.cables:
                        continue
                    seen.add(ep)
                    frontier.append((ep, hops + [(sw.switch_id, end[2], out)]))
        raise NoPath(f"no fabric path from node {src_node} to node {dst_node}")

    def establish(self, hops, now: int) -> int:
        """Program bidirectional circuits along ``hops``; returns when all are effective."""
        ready = now
        by_switch: dict[int, dict[int, int]] = {}
        for sw_id, a, b in hops:
            m = by_switch.setdefault(sw_id, dict(self.switches[sw_id].latest_map()))
            m[a] = b
            m[b] = a
        for sw_id, m in sorted(by_switch.items()):
            sw = self.switches[sw_id]
            if m == sw.latest_map():
                ready = max(ready, sw._times[-1])
                continue
            ready = max(ready, sw.configure(m, now))
        return ready
