"""Scenario files: parsing, validation, system construction and runs.

A scenario is a JSON document (``schema_version`` 1) describing the nodes,
links, switches, segments and workloads of one experiment. See the shipped
files under ``sdbridge/scenarios`` for complete examples.
"""

from __future__ import annotations

import copy
import itertools
import json
import math
import re
from dataclasses import dataclass, replace
from importlib import resources

from .bridge import BridgeConfig, MemportEntry, RateLimiterConfig, SerdesLink
from .bus import AddressRegion, LocalMemoryModel
from .calibrate import Calibration, Targets, calibrate
from .control import DEFAULT_GRANULE, ControlPlane
from .errors import ConfigError, SimError
from .fabric import CircuitSwitch
from .metrics import Row, RunMetrics, jain_index, percentile
from .sim import ClockDomain, Simulator, derive_seed, us
from .system import Node, SlaveSpec, System
from .workload import KERNELS, StreamKernelSpec, SyntheticPattern, stream_run, synthetic_run

SCHEMA_VERSION = 1
MiB = 1 << 20
_UNITS = {"": 1, "B": 1, "KiB": 1 << 10, "MiB": 1 << 20, "GiB": 1 << 30, "TiB": 1 << 40}
AXIS_SHORTCUTS = {
    "cores": "workloads.*.cores",
    "placement": "workloads.*.placements",
    "kernel": "workloads.*.kernels",
    "link_rate": "links.*.rate_mibs",
    "rate_limit": "rate_limits.*.rate_mibs",
}
LIST_AXES = {"cores", "placement", "kernel"}


def parse_size(v) -> int:
    """Integer, hex string or ``"<n><unit>"`` (KiB/MiB/GiB/TiB) to bytes."""
    if isinstance(v, bool):
        raise ConfigError(f"bad size {v!r}")
    if isinstance(v, int):
        return v
    if isinstance(v, str):
        s = v.strip()
        if s.lower().startswith("0x"):
            return int(s, 16)
        m = re.fullmatch(r"(\d+)\s*([KMGT]iB|B)?", s)
        if m:
            return int(m.group(1)) * _UNITS[m.group(2) or ""]
    raise ConfigError(f"bad size {v!r}")


def shipped(name: str) -> str:
    """Path of a scenario shipped with the package (``dredbox-2node`` etc.)."""
    return str(resources.files("sdbridge") / "scenarios" / f"{name}.json")


def load(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


# overrides ---------------------------------------------------------------

def _coerce(text: str):
    try:
        return json.loads(text)
    except ValueError:
        return text


def set_path(doc: dict, key: str, value) -> None:
    """Set a dotted path; ``*`` applies to every list element."""
    parts = key.split(".")

    def walk(node, i):
        k = parts[i]
        last = i == len(parts) - 1
        if isinstance(node, list):
            idx = range(len(node)) if k == "*" else [int(k)]
            for j in idx:
                if last:
                    node[j] = copy.deepcopy(value)
                else:
                    walk(node[j], i + 1)
            return
        if not isinstance(node, dict):
            raise ConfigError(f"override {key!r}: {'.'.join(parts[:i])} is not an object")
        if last:
            node[k] = copy.deepcopy(value)
        else:
            if k not in node:
                node[k] = {}
            walk(node[k], i + 1)

    walk(doc, 0)


def apply_override(doc: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not key=value")
    key, text = assignment.split("=", 1)
    set_path(doc, key.strip(), _coerce(text.strip()))


def parse_axis(spec: str) -> tuple[str, list]:
    if "=" not in spec:
        raise ConfigError(f"axis {spec!r} is not key=v1,v2,...")
    key, text = spec.split("=", 1)
    values = [_coerce(v.strip()) for v in text.split(",") if v.strip()]
    return key.strip(), values


def apply_axis(doc: dict, key: str, value) -> None:
    path = AXIS_SHORTCUTS.get(key, key)
    set_path(doc, path, [value] if key in LIST_AXES else value)


# validation --------------------------------------------------------------

@dataclass(frozen=True)
class Diagnostic:
    field: str
    message: str
    file: str = "<scenario>"

    def __str__(self):
        return f"{self.file}: {self.field}: {self.message}"


class _Checker:
    def __init__(self, file: str):
        self.file = file
        self.diags: list[Diagnostic] = []

    def err(self, field: str, msg: str) -> None:
        self.diags.append(Diagnostic(field, msg, self.file))

    def get(self, d, key, field, kind, required=True, default=None):
        if not isinstance(d, dict) or key not in d:
            if required:
                self.err(f"{field}.{key}" if field else key, "missing")
            return default
        v = d[key]
        ok = {
            "int": isinstance(v, int) and not isinstance(v, bool),
            "num": isinstance(v, (int, float)) and not isinstance(v, bool),
            "str": isinstance(v, str),
            "list": isinstance(v, list),
            "dict": isinstance(v, dict),
            "bool": isinstance(v, bool),
        }[kind]
        if not ok:
            self.err(f"{field}.{key}" if field else key, f"expected {kind}, got {type(v).__name__}")
            return default
        return v

    def size(self, d, key, field, required=True):
        if not isinstance(d, dict) or key not in d:
            if required:
                self.err(f"{field}.{key}", "missing")
            return None
        try:
            return parse_size(d[key])
        except ConfigError as exc:
            self.err(f"{field}.{key}", str(exc))
            return None

    def region(self, d, field):
        if not isinstance(d, dict):
            self.err(field, "expected object with base and size")
            return None
        base, size = self.size(d, "base", field), self.size(d, "size", field)
        if base is None or size is None:
            return None
        if size <= 0 or base < 0:
            self.err(field, f"region base {base:#x} size {size} is invalid")
            return None
        return AddressRegion(base, size)


def validate(doc, file: str = "<scenario>") -> list[Diagnostic]:
    """All static checks; an empty list means the scenario can be run."""
    c = _Checker(file)
    if not isinstance(doc, dict):
        c.err("$", "scenario must be a JSON object")
        return c.diags
    ver = c.get(doc, "schema_version", "", "int")
    if ver is not None and ver != SCHEMA_VERSION:
        c.err("schema_version", f"unsupported version {ver} (expected {SCHEMA_VERSION})")
    c.get(doc, "name", "", "str")
    c.get(doc, "seed", "", "int", required=False)
    dur = c.get(doc, "duration_us", "", "num")
    if dur is not None and dur <= 0:
        c.err("duration_us", "must be > 0")
    warm = c.get(doc, "warmup", "", "num", required=False, default=0.1)
    if warm is not None and not 0 <= warm < 1:
        c.err("warmup", "must be in [0, 1)")
    clk = c.get(doc, "bus_clock_mhz", "", "num", required=False, default=167.5)
    if clk is not None and clk <= 0:
        c.err("bus_clock_mhz", "must be > 0")

    br = c.get(doc, "bridge", "", "dict", required=False, default={})
    if br:
        try:
            _bridge_config(br)
        except (TypeError, ConfigError) as exc:
            c.err("bridge", str(exc))

    cal = c.get(doc, "calibration", "", "dict", required=False, default={})
    for k in ("slave_latency_ns", "port_bandwidth_mibs", "flop_ns", "window"):
        v = c.get(cal, k, "calibration", "num", required=False) if cal else None
        if v is not None and (v < 0 or (k in ("port_bandwidth_mibs", "window") and v <= 0)):
            c.err(f"calibration.{k}", "out of range")
    tgt = c.get(doc, "calibrate", "", "dict", required=False)
    if tgt is not None:
        for k in tgt:
            if k not in ("local_copy_mibs", "local_scale_mibs", "elements", "duration_us"):
                c.err(f"calibrate.{k}", "unknown calibration target")
    if not (cal and "port_bandwidth_mibs" in cal) and tgt is None:
        c.err("calibration.port_bandwidth_mibs", "missing (give constants or a calibrate block)")

    # nodes
    nodes = {}
    for i, n in enumerate(c.get(doc, "nodes", "", "list", default=[])):
        f = f"nodes[{i}]"
        nid = c.get(n, "id", f, "int")
        role = c.get(n, "role", f, "str")
        if nid is None or role is None:
            continue
        if nid in nodes:
            c.err(f"{f}.id", f"duplicate node id {nid}")
            continue
        if role not in ("compute", "memory"):
            c.err(f"{f}.role", f"unknown role {role!r}")
            continue
        info = {"role": role, "masters": 0, "aperture": None, "slaves": {}, "regions": [],
                "xcvrs": 0, "field": f}
        nodes[nid] = info
        ctrl = AddressRegion(parse_size(n.get("control_base", 0xA000_0000)), 0x10_0000)
        info["regions"].append((ctrl, f"{f}.control_base"))
        if role == "compute":
            m = c.get(n, "masters", f, "int")
            if m is not None and m < 1:
                c.err(f"{f}.masters", "compute node needs at least one master")
            info["masters"] = m or 0
            if "aperture" in n:
                ap = c.region(n["aperture"], f"{f}.aperture")
                if ap is not None:
                    info["aperture"] = ap
                    info["regions"].append((ap, f"{f}.aperture"))
            if "local_memory" in n:
                lm = c.region(n["local_memory"], f"{f}.local_memory")
                if lm is not None:
                    info["regions"].append((lm, f"{f}.local_memory"))
                    info["local"] = lm
                ports = n["local_memory"].get("ports", 1)
                if not isinstance(ports, int) or ports < 1:
                    c.err(f"{f}.local_memory.ports", "must be an integer >= 1")
        else:
            for j, s in enumerate(c.get(n, "slaves", f, "list", default=[])):
                sf = f"{f}.slaves[{j}]"
                port = c.get(s, "port", sf, "int")
                reg = c.region(s, sf)
                if port is None or reg is None:
                    continue
                if port in info["slaves"]:
                    c.err(f"{sf}.port", f"duplicate slave port {port}")
                info["slaves"][port] = reg
            if not info["slaves"]:
                c.err(f"{f}.slaves", "memory node needs at least one slave")
            bs = c.get(n, "bandwidth_scale", f, "num", required=False)
            if bs is not None and bs <= 0:
                c.err(f"{f}.bandwidth_scale", "must be > 0")
        regs = info["regions"]
        for (a, fa), (b, fb) in itertools.combinations(regs, 2):
            if a.overlaps(b):
                c.err(fb, f"overlaps {fa} on the node's bus map")

    # switches
    switches = {}
    for i, s in enumerate(c.get(doc, "switches", "", "list", required=False, default=[])):
        f = f"switches[{i}]"
        sid = c.get(s, "id", f, "int")
        ports = c.get(s, "ports", f, "int")
        if sid is None or ports is None:
            continue
        if sid in switches:
            c.err(f"{f}.id", f"duplicate switch id {sid}")
            continue
        if ports < 2:
            c.err(f"{f}.ports", "a switch needs at least 2 ports")
        switches[sid] = ports
        for k in ("reconfig_ns", "traversal_ns"):
            v = c.get(s, k, f, "num", required=False)
            if v is not None and v < 0:
                c.err(f"{f}.{k}", "must be >= 0")
        if "map" in s:
            try:
                CircuitSwitch(sid, max(ports, 1)).validate({int(k): int(v) for k, v in s["map"].items()})
            except (ValueError, AttributeError) as exc:
                c.err(f"{f}.map", str(exc))

    # links
    wired = set()
    for i, link in enumerate(c.get(doc, "links", "", "list", required=False, default=[])):
        f = f"links[{i}]"
        for end in ("a", "b"):
            ep = c.get(link, end, f, "dict")
            if ep is None:
                continue
            ef = f"{f}.{end}"
            if "node" in ep:
                if ep["node"] not in nodes:
                    c.err(f"{ef}.node", f"references missing node {ep['node']}")
                else:
                    nodes[ep["node"]]["xcvrs"] += 1
            elif "switch" in ep:
                sw, port = ep["switch"], ep.get("port")
                if sw not in switches:
                    c.err(f"{ef}.switch", f"references missing switch {sw}")
                elif not isinstance(port, int) or not 0 <= port < switches[sw]:
                    c.err(f"{ef}.port", f"switch {sw} has no port {port}")
                elif (sw, port) in wired:
                    c.err(f"{ef}.port", f"switch {sw} port {port} is already wired")
                else:
                    wired.add((sw, port))
            else:
                c.err(ef, "endpoint needs node or switch+port")
        for k in ("rate_mibs", "line_gbps", "latency_ns", "header_bits", "cable_ns"):
            v = c.get(link, k, f, "num", required=False)
            if v is not None and v < 0:
                c.err(f"{f}.{k}", "must be >= 0")

    # static memports
    tables: dict[tuple, list] = {}
    for i, m in enumerate(c.get(doc, "memports", "", "list", required=False, default=[])):
        f = f"memports[{i}]"
        nid, master, slot = (c.get(m, k, f, "int") for k in ("node", "master", "slot"))
        reg = c.region(m, f)
        rb = c.size(m, "remote_base", f)
        dn, dp = c.get(m, "dest_node", f, "int"), c.get(m, "dest_port", f, "int")
        if None in (nid, master, slot, dn, dp) or reg is None or rb is None:
            continue
        n = nodes.get(nid)
        if n is None or n["role"] != "compute":
            c.err(f"{f}.node", f"node {nid} is not a compute node")
            continue
        if not 0 <= master < n["masters"]:
            c.err(f"{f}.master", f"node {nid} has no master {master}")
        if not 0 <= slot < _bridge_config(doc.get("bridge", {})).memport_slots:
            c.err(f"{f}.slot", f"slot {slot} out of range")
        if n["aperture"] is None or not reg.within(n["aperture"]):
            c.err(f, f"region {reg} is outside node {nid}'s bridge aperture")
        d = nodes.get(dn)
        if d is None or dp not in d["slaves"]:
            c.err(f"{f}.dest_port", f"node {dn} has no slave port {dp}")
        elif not AddressRegion(rb, reg.size).within(d["slaves"][dp]):
            c.err(f"{f}.remote_base", f"translated range is outside node {dn} slave {dp}")
        for other, of in tables.get((nid, master), []):
            if other.overlaps(reg):
                c.err(f, f"overlaps {of} in master {master}'s memport table")
        tables.setdefault((nid, master), []).append((reg, f))

    # segments
    granule = DEFAULT_GRANULE
    segs = []
    for i, s in enumerate(c.get(doc, "segments", "", "list", required=False, default=[])):
        f = f"segments[{i}]"
        cn, mn = c.get(s, "compute", f, "int"), c.get(s, "memory", f, "int")
        size = c.size(s, "size", f)
        masters = c.get(s, "masters", f, "list", required=False)
        if cn is None or mn is None or size is None:
            continue
        if cn not in nodes or nodes[cn]["role"] != "compute" or nodes[cn]["aperture"] is None:
            c.err(f"{f}.compute", f"node {cn} is not a compute node with an aperture")
            continue
        if mn not in nodes or nodes[mn]["role"] != "memory":
            c.err(f"{f}.memory", f"node {mn} is not a memory node")
            continue
        if size <= 0 or size % granule:
            c.err(f"{f}.size", f"must be a positive multiple of {granule} bytes")
        ms = masters if masters is not None else list(range(nodes[cn]["masters"]))
        for m in ms:
            if not isinstance(m, int) or not 0 <= m < nodes[cn]["masters"]:
                c.err(f"{f}.masters", f"node {cn} has no master {m}")
        segs.append((cn, size, set(ms)))

    # rate limits
    for i, r in enumerate(c.get(doc, "rate_limits", "", "list", required=False, default=[])):
        f = f"rate_limits[{i}]"
        nid, master = c.get(r, "node", f, "int"), c.get(r, "master", f, "int")
        rate = c.get(r, "rate_mibs", f, "num")
        depth = c.size(r, "depth", f)
        if nid not in nodes or nodes[nid]["role"] != "compute" or not (
                master is not None and 0 <= master < nodes[nid]["masters"]):
            c.err(f, f"node {nid} master {master} does not exist")
        if rate is not None and rate < 0:
            c.err(f"{f}.rate_mibs", "must be >= 0")
        if depth is not None and depth < 64:
            c.err(f"{f}.depth", "must hold at least one 64 B flit")

    # workloads
    window = (cal or {}).get("window", 4)
    for i, w in enumerate(c.get(doc, "workloads", "", "list", default=[])):
        f = f"workloads[{i}]"
        kind = c.get(w, "type", f, "str")
        nid = w.get("node", 0) if isinstance(w, dict) else 0
        n = nodes.get(nid)
        if n is None or n["role"] != "compute":
            c.err(f"{f}.node", f"node {nid} is not a compute node")
            continue
        if kind == "stream":
            kernels = c.get(w, "kernels", f, "list", default=[])
            for k in kernels:
                if k not in KERNELS:
                    c.err(f"{f}.kernels", f"unknown kernel {k!r}")
            cores = c.get(w, "cores", f, "list", default=[])
            for k in cores:
                if not isinstance(k, int) or not 1 <= k <= n["masters"]:
                    c.err(f"{f}.cores", f"core count {k} not in 1..{n['masters']}")
            pls = c.get(w, "placements", f, "list", default=[])
            elements = c.get(w, "elements", f, "int", required=False, default=10_000_000)
            for p in pls:
                if p not in ("local", "remote"):
                    c.err(f"{f}.placements", f"unknown placement {p!r}")
            if elements is None or not kernels:
                continue
            for k in kernels:
                if k not in KERNELS:
                    continue
                try:
                    spec = StreamKernelSpec(k, elements, cores=max([x for x in cores if isinstance(x, int)]
                                                                   or [1]), window=int(window))
                except ConfigError as exc:
                    c.err(f, str(exc))
                    continue
                if "local" in pls and spec.footprint > getattr(n.get("local"), "size", 0):
                    c.err(f"{f}.elements", f"{k} arrays ({spec.footprint} B) do not fit local memory")
                if "remote" in pls:
                    need = set(range(spec.cores))
                    if not any(cn == nid and sz >= spec.footprint and need <= ms for cn, sz, ms in segs):
                        c.err(f"{f}.placements",
                              f"remote {k} needs a segment on node {nid} of >= {spec.footprint} B "
                              f"mapped for masters 0..{spec.cores - 1}")
        elif kind == "synthetic":
            ms = c.get(w, "masters", f, "list", default=[])
            for m in ms:
                if not isinstance(m, int) or not 0 <= m < n["masters"]:
                    c.err(f"{f}.masters", f"node {nid} has no master {m}")
            pat = c.get(w, "pattern", f, "dict", required=False, default={})
            seg = w.get("segment")
            if seg is not None and not (isinstance(seg, int) and 0 <= seg < len(segs)):
                c.err(f"{f}.segment", f"no segment {seg}")
            try:
                _pattern(pat, AddressRegion(0, 1 << 40))
            except (TypeError, ConfigError) as exc:
                c.err(f"{f}.pattern", str(exc))
        elif kind is not None:
            c.err(f"{f}.type", f"unknown workload type {kind!r}")

    if not c.diags:
        # dynamic-but-static checks: paths and pool capacity, via a dry build
        try:
            _build(doc, Simulator(0), _calibration(doc), allocate=True)
        except SimError as exc:
            c.err("$", f"{type(exc).__name__}: {exc}")
    return c.diags


# construction ------------------------------------------------------------

def _bridge_config(d: dict) -> BridgeConfig:
    return BridgeConfig(**d)


def _pattern(d: dict, region: AddressRegion) -> SyntheticPattern:
    d = dict(d)
    if "region" in d:
        r = d.pop("region")
        region = AddressRegion(parse_size(r["base"]), parse_size(r["size"]))
    return SyntheticPattern(region=region, **d)


def _calibration(doc: dict) -> Calibration:
    d = doc.get("calibration", {})
    fields = {k: d[k] for k in ("slave_latency_ns", "port_bandwidth_mibs", "flop_ns", "window") if k in d}
    if "window" in fields:
        fields["window"] = int(fields["window"])
    return Calibration(**fields)


def _link(d: dict) -> SerdesLink:
    line = d.get("line_gbps", 10.0) * 1e9
    rate = d.get("rate_mibs")
    return SerdesLink(line_rate=line, payload_rate=None if rate is None else rate * MiB,
                      latency_ns=d.get("latency_ns", 0.0), header_bits=int(d.get("header_bits", 64)))


@dataclass
class Built:
    sim: Simulator
    system: System
    control: ControlPlane
    segments: list
    ready_at: int


def _build(doc: dict, sim: Simulator, cal: Calibration, allocate: bool = True) -> Built:
    clock = ClockDomain("bus", doc.get("bus_clock_mhz", 167.5) * 1e6)
    bcfg = _bridge_config(doc.get("bridge", {}))
    model = LocalMemoryModel(cal.slave_latency_ns, cal.port_bandwidth_mibs * MiB,
                             doc.get("slave_outstanding", 16))
    system = System(sim)
    for n in doc["nodes"]:
        ap = n.get("aperture")
        ap = AddressRegion(parse_size(ap["base"]), parse_size(ap["size"])) if ap else None
        node = system.add_node(Node(sim, n["id"], n["role"], clock, bcfg, ap,
                                    parse_size(n.get("control_base", 0xA000_0000)), n.get("name")))
        for m in range(n.get("masters", 0)):
            node.add_master(m)
        lm = n.get("local_memory")
        if lm:
            node.set_local_memory(AddressRegion(parse_size(lm["base"]), parse_size(lm["size"])), model,
                                  lm.get("ports", 1))
        smodel = model
        if n.get("bandwidth_scale", 1.0) != 1.0:
            smodel = replace(model, bandwidth=model.bandwidth * n["bandwidth_scale"])
        for s in n.get("slaves", []):
            node.add_slave(SlaveSpec(s["port"], AddressRegion(parse_size(s["base"]), parse_size(s["size"])),
                                     smodel))
    for s in doc.get("switches", []):
        sw = CircuitSwitch(s["id"], s["ports"], s.get("reconfig_ns", 20e6), s.get("traversal_ns", 0.0))
        if "map" in s:
            sw.preset(s["map"])
        system.add_switch(sw)
    for link in doc.get("links", []):
        serdes = _link(link)
        ends = []
        for e in (link["a"], link["b"]):
            if "node" in e:
                x = system.add_transceiver(e["node"], serdes)
                ends.append(("x", e["node"], x.index))
            else:
                ends.append(("p", e["switch"], e["port"]))
        system.wire(ends[0], ends[1], link.get("cable_ns", 0.0))
    system.finalize()

    for m in doc.get("memports", []):
        base = parse_size(m["base"])
        entry = MemportEntry(AddressRegion(base, parse_size(m["size"])), parse_size(m["remote_base"]) - base,
                             m.get("xcvr", 0), m["dest_node"], m["dest_port"], True)
        system.nodes[m["node"]].bridge.table(m["master"]).set_slot(m["slot"], entry)
    for r in doc.get("rate_limits", []):
        system.nodes[r["node"]].bridge.set_rate_limit(
            r["master"], RateLimiterConfig(r["rate_mibs"] * MiB, parse_size(r["depth"])))

    cp = ControlPlane(system)
    handles = []
    if allocate:
        for s in doc.get("segments", []):
            ms = s.get("masters", list(system.nodes[s["compute"]].masters))
            handles.append(cp.allocate_segment(s["compute"], s["memory"], parse_size(s["size"]), ms))
    ready = cp.run_until_ready(handles) if handles else 0
    return Built(sim, system, cp, handles, ready)


def build(doc: dict, seed: int = 0, cal: Calibration | None = None) -> Built:
    return _build(doc, Simulator(seed), cal or _calibration(doc))


# runs --------------------------------------------------------------------

def _link_util(system: System, node: int, start: int, span: int) -> float:
    xs = system.nodes[node].bridge.xcvrs
    if not xs or span <= 0:
        return 0.0
    busy = sum(x.pipe_busy_ps for x in xs)
    return min(1.0, busy / (len(xs) * span))


def _counters(system: System) -> dict:
    out = {}
    for nid, n in sorted(system.nodes.items()):
        b = n.bridge
        out[f"node{nid}"] = {
            "injected": sum(p.injected for p in b.ports),
            "tx_flits": sum(x.tx_flits for x in b.xcvrs),
            "rx_flits": sum(x.rx_flits for x in b.xcvrs),
            "delivered": b.stats.delivered_local,
            "in_flight": sum(x.in_flight for x in b.xcvrs),
            "max_edge_occupancy": max((x.edge.max_occupancy for x in b.xcvrs), default=0),
            "decode_errors": b.stats.decode_errors,
            "register_writes": b.stats.register_writes,
            "stall_rate_ps": sum(p.stall_ps["rate"] for p in b.ports),
            "stall_backpressure_ps": sum(p.stall_ps["backpressure"] for p in b.ports),
        }
    return out


def stream_point(doc: dict, cal: Calibration, kernel: str, cores: int, placement: str, *,
                 node: int = 0, elements: int | None = None, duration_us: float | None = None,
                 seed: int = 0):
    """One STREAM measurement on a freshly built system; returns (result, built)."""
    w = next((w for w in doc["workloads"] if w.get("type") == "stream"), {})
    elements = elements or w.get("elements", 10_000_000)
    dur = us(duration_us or doc["duration_us"])
    b = build(doc, seed, cal)
    spec = StreamKernelSpec(kernel, elements, flop_ns=cal.flop_ns, cores=cores, placement=placement,
                            window=cal.window)
    seg = None
    if placement == "remote":
        seg = next((h for h in b.segments if h.compute_node == node and h.local.size >= spec.footprint
                    and set(range(cores)) <= set(h.masters)), None)
    res = stream_run(b.system, spec, dur, node=node, segment=seg, warmup=doc.get("warmup", 0.1))
    return res, b


def resolve_calibration(doc: dict, log=print) -> Calibration:
    """Constants from the scenario, fitted first when a calibrate block asks for it."""
    cal = _calibration(doc)
    tgt = doc.get("calibrate")
    if tgt is None or ("port_bandwidth_mibs" in doc.get("calibration", {})
                       and "flop_ns" in doc.get("calibration", {})):
        return cal
    return run_calibration(doc, tgt, log)


def run_calibration(doc: dict, tgt: dict, log=print) -> Calibration:
    targets = Targets(tgt["local_copy_mibs"], tgt.get("local_scale_mibs"))
    elements = tgt.get("elements")
    dur = tgt.get("duration_us", min(doc["duration_us"], 50))
    local_doc = copy.deepcopy(doc)
    local_doc["segments"] = []

    def measure(cal, kernel):
        res, _ = stream_point(local_doc, cal, kernel, 1, "local", elements=elements, duration_us=dur)
        return res.bandwidth_mibs

    cal = calibrate(measure, targets, _calibration(doc))
    log(f"calibrated: port_bandwidth_mibs={cal.port_bandwidth_mibs} flop_ns={cal.flop_ns} "
        f"slave_latency_ns={cal.slave_latency_ns}")
    return cal


def run(doc: dict, *, seed: int | None = None, label: str | None = None, log=print) -> RunMetrics:
    """Execute every workload of ``doc``; one result row per measurement point."""
    seed = doc.get("seed", 0) if seed is None else seed
    name = label or doc["name"]
    metrics = RunMetrics(name, seed)
    cal = resolve_calibration(doc, log)
    for wi, w in enumerate(doc["workloads"]):
        node = w.get("node", 0)
        if w["type"] == "stream":
            for kernel in w["kernels"]:
                for cores in w["cores"]:
                    for placement in w["placements"]:
                        res, b = stream_point(doc, cal, kernel, cores, placement, node=node,
                                              seed=derive_seed(seed, wi, kernel, cores, placement))
                        lat_ns = [x / 1000 for x in res.latencies_ps]
                        util = _link_util(b.system, node, 0, b.sim.now - b.ready_at) if placement == "remote" else 0.0
                        row = Row(name, kernel, cores, placement, res.bandwidth_mibs,
                                  res.mean_latency_ns, percentile(lat_ns, 99), util)
                        metrics.add(row, lat_ns, _counters(b.system))
                        log(f"{name} {kernel} cores={cores} {placement}: {res.bandwidth_mibs:.1f} MiB/s "
                            f"mean latency {res.mean_latency_ns:.0f} ns")
        else:
            metrics_row = _synthetic(doc, w, cal, derive_seed(seed, wi), name)
            row, lat_ns, counters = metrics_row
            metrics.add(row, lat_ns, counters)
            log(f"{name} {row.kernel} masters={row.cores}: {row.bandwidth_mibs:.1f} MiB/s "
                f"jain {counters['jain']:.4f}")
    metrics.pair_penalties()
    return metrics


def _synthetic(doc, w, cal, seed, name):
    b = build(doc, seed, cal)
    node = w.get("node", 0)
    seg = b.segments[w.get("segment", 0)] if b.segments else None
    region = seg.local if seg is not None else b.system.nodes[node].local.region
    pattern = _pattern(w.get("pattern", {}), region)
    dur = us(w.get("duration_us", doc["duration_us"]))
    start = b.sim.now
    stats = synthetic_run(b.system, {m: pattern for m in w["masters"]}, dur, node=node, seed=seed,
                          drain=True)
    total = sum(stats.bytes)
    bw = total / (dur / 1e12) / MiB
    lat_ns = [c.latency / 1000 for cs in stats.completions for c in cs]
    ap = b.system.nodes[node].aperture
    placement = "remote" if ap is not None and pattern.region.within(ap) else "local"
    counters = _counters(b.system)
    counters["per_master_bytes"] = stats.bytes
    counters["jain"] = jain_index(stats.bytes)
    row = Row(name, w.get("name", f"synthetic-{pattern.kind}"), len(w["masters"]), placement, bw,
              sum(lat_ns) / len(lat_ns) if lat_ns else 0.0, percentile(lat_ns, 99),
              _link_util(b.system, node, start, b.sim.now - start))
    return row, lat_ns, counters


def sweep_points(doc: dict, axes: list[tuple[str, list]]):
    """Cartesian product of axis values: yields (label, overridden doc, seed)."""
    base_seed = doc.get("seed", 0)
    if not axes:
        yield doc["name"], copy.deepcopy(doc), base_seed
        return
    keys = [k for k, _ in axes]
    for combo in itertools.product(*[v for _, v in axes]):
        d = copy.deepcopy(doc)
        for k, v in zip(keys, combo):
            apply_axis(d, k, v)
        label = doc["name"] + "[" + ",".join(f"{k}={_fmt(v)}" for k, v in zip(keys, combo)) + "]"
        yield label, d, derive_seed(base_seed, *[(k, v) for k, v in zip(keys, combo)])


def _fmt(v) -> str:
    if isinstance(v, float) and math.isfinite(v) and v == int(v):
        return str(int(v))
    return str(v)


__all__ = ["Diagnostic", "apply_override", "apply_axis", "build", "load", "parse_axis", "parse_size",
           "run", "run_calibration", "resolve_calibration", "shipped", "stream_point", "sweep_points",
           "validate"]
