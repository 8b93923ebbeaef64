"""Traffic generators: closed-loop STREAM cores and synthetic patterns."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .bus import AddressRegion, Completion, Kind
from .errors import ConfigError, Misplacement
from .sim import PRIO_ISSUE, Rng, ns

LINE = 64
BEAT = 8

# (reads, writes, flops) per iteration
KERNELS = {
    "copy": (1, 1, 0),
    "scale": (1, 1, 1),
    "sum": (2, 1, 1),
    "triad": (2, 1, 2),
}


@dataclass
class StreamKernelSpec:
    kind: str = "copy"
    elements: int = 10_000_000
    element_size: int = 8
    flop_ns: float = 0.0
    cores: int = 1
    placement: str = "local"
    window: int = 4
    cache_bytes: int = 1 << 20

    def __post_init__(self):
        if self.kind not in KERNELS:
            raise ConfigError(f"unknown kernel {self.kind!r}; expected one of {sorted(KERNELS)}")
        if self.placement not in ("local", "remote"):
            raise ConfigError(f"placement must be local or remote, not {self.placement!r}")
        if self.element_size <= 0 or LINE % self.element_size:
            raise ConfigError(f"element size {self.element_size} must divide the {LINE} B line")
        if self.cores < 1 or self.window < 1:
            raise ConfigError("cores and window must be >= 1")
        if self.flop_ns < 0:
            raise ConfigError("flop latency must be >= 0")
        if self.elements * self.element_size * self.arrays <= self.cache_bytes:
            raise ConfigError(f"{self.arrays} arrays of {self.elements} elements fit in the "
                              f"{self.cache_bytes} B cache")
        if self.elements * self.element_size // LINE < self.cores:
            raise ConfigError("fewer array lines than cores")

    @property
    def reads(self) -> int:
        return KERNELS[self.kind][0]

    @property
    def writes(self) -> int:
        return KERNELS[self.kind][1]

    @property
    def flops(self) -> int:
        return KERNELS[self.kind][2]

    @property
    def arrays(self) -> int:
        return self.reads + self.writes

    @property
    def bytes_per_iter(self) -> int:
        return (self.reads + self.writes) * self.element_size

    @property
    def array_bytes(self) -> int:
        return -(-self.elements * self.element_size // LINE) * LINE

    @property
    def footprint(self) -> int:
        return self.array_bytes * self.arrays


class CoreModel:
    """One core sweeping its slice of the STREAM arrays.

    Work proceeds in 64 B line groups. Each array stream (every input and
    the output) has its own outstanding window, as a stream prefetcher
    would. Input lines are fetched up to ``2 * window`` groups ahead; a group's
    flops run serially once all its operands arrived, then its output line
    is written.
    """

    def __init__(self, sim, master, spec: StreamKernelSpec, base: int, core: int, on_iter=None):
        self.sim = sim
        self.master = master
        self.spec = spec
        self.id = core
        self.window = spec.window
        self.per_line = LINE // spec.element_size
        lines = spec.array_bytes // LINE
        lo = lines * core // spec.cores
        hi = lines * (core + 1) // spec.cores
        self.first_line, self.lines = lo, hi - lo
        ab = spec.array_bytes
        # input arrays first, output array last
        self.inputs = [base + i * ab for i in range(spec.reads)]
        self.output = base + spec.reads * ab
        self.flop_ps = ns(spec.flop_ns * spec.flops * self.per_line)
        self.on_iter = on_iter
        self.r_inflight = [0] * spec.reads
        self.r_next = [0] * spec.reads  # next group to fetch, per input stream
        self.w_inflight = 0
        self.max_inflight = 0
        self.compute_group = 0
        self.arrived: dict[int, int] = {}
        self.writes: deque[int] = deque()
        self.busy = False
        self.iterations = 0
        self.latencies: list[int] = []
        self.completions = 0

    @property
    def inflight(self) -> int:
        return sum(self.r_inflight) + self.w_inflight

    def _line_addr(self, array_base: int, group: int) -> int:
        return array_base + ((self.first_line + group % self.lines) * LINE)

    def start(self) -> None:
        self.pump()

    def pump(self) -> None:
        w = self.window
        while self.writes and self.w_inflight < w:
            g = self.writes.popleft()
            self.w_inflight += 1
            self._issue(Kind.WRITE, self._line_addr(self.output, g), self._write_done)
        limit = self.compute_group + 2 * w  # prefetch distance
        while True:
            best = None
            for i, g in enumerate(self.r_next):
                if g < limit and self.r_inflight[i] < w and (best is None or g < self.r_next[best]):
                    best = i
            if best is None:
                break
            g = self.r_next[best]
            self.r_next[best] = g + 1
            self.r_inflight[best] += 1
            self._issue(Kind.READ, self._line_addr(self.inputs[best], g),
                        lambda c, g=g, i=best: self._read_done(c, g, i))

    def _issue(self, kind, addr, cb) -> None:
        n = self.inflight
        if n > self.max_inflight:
            self.max_inflight = n
        self.master.issue(kind, addr, BEAT, LINE // BEAT, cb)

    def _retire(self, c: Completion) -> None:
        self.completions += 1
        self.latencies.append(c.latency)

    def _read_done(self, c: Completion, g: int, i: int) -> None:
        self.r_inflight[i] -= 1
        self._retire(c)
        self.arrived[g] = self.arrived.get(g, 0) + 1
        self._compute()
        self.pump()

    def _compute(self) -> None:
        if self.busy:
            return
        g = self.compute_group
        if self.arrived.get(g, 0) < self.spec.reads:
            return
        del self.arrived[g]
        if self.flop_ps:
            self.busy = True
            self.sim.after(self.flop_ps, self._computed, g, priority=PRIO_ISSUE)
        else:
            self._computed(g)

    def _computed(self, g: int) -> None:
        self.busy = False
        self.compute_group = g + 1
        self.writes.append(g)
        self._compute()
        self.pump()

    def _write_done(self, c: Completion) -> None:
        self.w_inflight -= 1
        self._retire(c)
        self.iterations += self.per_line
        if self.on_iter is not None:
            self.on_iter(self.per_line, self.sim.now)
        self.pump()


@dataclass
class KernelResult:
    kind: str
    cores: int
    placement: str
    bandwidth_mibs: float
    iterations: int
    elapsed_ps: int
    latencies_ps: list = field(default_factory=list, repr=False)
    max_inflight: int = 0

    @property
    def mean_latency_ns(self) -> float:
        if not self.latencies_ps:
            return 0.0
        return sum(self.latencies_ps) / len(self.latencies_ps) / 1000


def place_arrays(node, spec: StreamKernelSpec, segment=None) -> int:
    """Base address of the contiguous array block for ``spec.placement``."""
    if spec.placement == "local":
        if node.local is None or spec.footprint > node.local.region.size:
            raise Misplacement(f"node {node.id}: local memory cannot hold {spec.footprint} B of arrays")
        return node.local.region.base
    if segment is None or not segment.live:
        raise Misplacement("remote placement needs a live segment covering the arrays")
    if spec.footprint > segment.local.size:
        raise Misplacement(f"segment of {segment.local.size} B cannot hold {spec.footprint} B of arrays")
    missing = [m for m in range(spec.cores) if m not in segment.masters]
    if missing:
        raise Misplacement(f"segment is not mapped for masters {missing}")
    return segment.local.base


def stream_run(system, spec: StreamKernelSpec, duration_ps: int, *, node: int = 0, segment=None,
               warmup: float = 0.1) -> KernelResult:
    """Run ``spec`` on ``node``'s first ``spec.cores`` masters for ``duration_ps``.

    Bandwidth counts STREAM bytes of iterations whose output write completed
    after the warm-up cutoff, divided by the measured span.
    """
    sim = system.sim
    n = system.nodes[node]
    if spec.cores > len(n.masters):
        raise ConfigError(f"node {node} has {len(n.masters)} masters, spec wants {spec.cores}")
    base = place_arrays(n, spec, segment)
    start = sim.now
    cutoff = start + int(duration_ps * warmup)
    end = start + duration_ps
    counted = [0]

    def on_iter(k, t):
        if t >= cutoff:
            counted[0] += k

    cores = [CoreModel(sim, n.masters[m], spec, base, m, on_iter) for m in range(spec.cores)]
    for c in cores:
        sim.at(start, c.start, priority=PRIO_ISSUE)
    sim.run_until(end)
    span = end - cutoff
    bw = counted[0] * spec.bytes_per_iter / (span / 1e12) / 2**20 if span > 0 else 0.0
    lats = [x for c in cores for x in c.latencies]
    return KernelResult(spec.kind, spec.cores, spec.placement, bw, counted[0], span, lats,
                        max(c.max_inflight for c in cores))


@dataclass
class SyntheticPattern:
    kind: str = "uniform"  # sequential | uniform | hotspot
    region: AddressRegion = AddressRegion(0x4_0000_0000, 1 << 30)
    beat_size: int = 8
    burst_len: int = 8
    read_fraction: float = 0.5
    window: int = 4
    rate: float | None = None  # transactions/s when open loop; None = closed loop
    hotspot_fraction: float = 0.1
    hotspot_prob: float = 0.9

    def __post_init__(self):
        if self.kind not in ("sequential", "uniform", "hotspot"):
            raise ConfigError(f"unknown pattern {self.kind!r}")
        if not 0.0 <= self.read_fraction <= 1.0:
            raise ConfigError("read_fraction must be in [0, 1]")
        if self.nbytes > self.region.size:
            raise ConfigError("request larger than target region")
        if self.rate is not None and self.rate <= 0:
            raise ConfigError("open-loop rate must be > 0")

    @property
    def nbytes(self) -> int:
        return self.beat_size * self.burst_len


class SyntheticSource:
    def __init__(self, sim, master, pattern: SyntheticPattern, rng: Rng, stop_at: int):
        self.sim = sim
        self.master = master
        self.p = pattern
        self.rng = rng
        self.stop_at = stop_at
        self.slots = pattern.region.size // pattern.nbytes
        self.seq = 0
        self.inflight = 0
        self.issued = 0
        self.completions: list[Completion] = []
        self.addrs: dict[int, int] = {}

    def _addr(self) -> int:
        p = self.p
        if p.kind == "sequential":
            slot = self.seq % self.slots
            self.seq += 1
        elif p.kind == "uniform":
            slot = int(self.rng.integers(0, self.slots))
        else:
            hot = max(1, int(self.slots * p.hotspot_fraction))
            if self.rng.random() < p.hotspot_prob:
                slot = int(self.rng.integers(0, hot))
            else:
                slot = int(self.rng.integers(0, self.slots))
        return p.region.base + slot * p.nbytes

    def _one(self) -> None:
        kind = Kind.READ if self.rng.random() < self.p.read_fraction else Kind.WRITE
        self.inflight += 1
        self.issued += 1
        txn = self.master.issue(kind, self._addr(), self.p.beat_size, self.p.burst_len, self._done)
        self.addrs[(txn.txn_id)] = txn.addr

    def _done(self, c: Completion) -> None:
        self.inflight -= 1
        self.completions.append(c)
        if self.p.rate is None:
            self.fill()

    def fill(self) -> None:
        while self.inflight < self.p.window and self.sim.now < self.stop_at:
            self._one()

    def tick(self) -> None:
        if self.sim.now >= self.stop_at:
            return
        if self.inflight < self.p.window:
            self._one()
        self.sim.after(max(1, int(round(1e12 / self.p.rate))), self.tick, priority=PRIO_ISSUE)

    def start(self) -> None:
        if self.p.rate is None:
            self.fill()
        else:
            self.tick()


@dataclass
class TrafficStats:
    issued: list
    completed: list
    bytes: list
    completions: list = field(repr=False, default_factory=list)


def synthetic_run(system, patterns: dict, duration_ps: int, *, node: int = 0, seed: int = 0,
                  drain: bool = True) -> TrafficStats:
    """Drive ``patterns`` (master id -> SyntheticPattern) until ``duration_ps``.

    Sources stop issuing at the deadline; with ``drain`` the run continues
    until every outstanding transaction has completed.
    """
    sim = system.sim
    n = system.nodes[node]
    stop = sim.now + duration_ps
    rng = Rng(seed)
    srcs = []
    for m, p in sorted(patterns.items()):
        s = SyntheticSource(sim, n.masters[m], p, rng.child(m), stop)
        srcs.append(s)
        sim.at(sim.now, s.start, priority=PRIO_ISSUE)
    sim.run_until(stop)
    if drain:
        sim.run()
    return TrafficStats([s.issued for s in srcs], [len(s.completions) for s in srcs],
                        [sum(c.nbytes for c in s.completions) for s in srcs],
                        [s.completions for s in srcs])
