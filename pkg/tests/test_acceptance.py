"""Acceptance criteria 1-10.

Each test records one PASS/FAIL line; the lines are printed in the pytest
terminal summary and by ``python tests/test_acceptance.py``.
"""

import json
import random
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from conftest import WINDOW, ideal_link, map_all  # noqa: E402
from sdbridge import scenario as sc  # noqa: E402
from sdbridge.bridge import MemportEntry, MemportTable, steer  # noqa: E402
from sdbridge.bus import AddressRegion, BusChannel, Flit, Kind, LocalMemoryModel  # noqa: E402
from sdbridge.cli import main as cli_main  # noqa: E402
from sdbridge.metrics import jain_index, penalty  # noqa: E402
from sdbridge.sim import Simulator, ns, us  # noqa: E402
from sdbridge.system import build_two_node  # noqa: E402
from sdbridge.workload import SyntheticPattern, synthetic_run  # noqa: E402
from test_control import random_alloc_free  # noqa: E402

MiB = 1 << 20
LINK_MIBS = 1280.0
RESULTS: dict[int, str] = {}


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line


# 1 ---------------------------------------------------------------------------

def test_c01_unloaded_round_trip():
    t0 = time.process_time()
    sim = Simulator()
    system = build_two_node(sim, link=ideal_link(), local_model=LocalMemoryModel(latency_ns=0))
    map_all(system)
    done = []
    system.nodes[0].masters[0].issue(Kind.READ, WINDOW.base, 8, 1, done.append)
    sim.run()
    rt = done[0].latency
    elapsed = time.process_time() - t0
    cycle = 1e12 / 167.5e6
    ok = abs(rt - ns(800)) <= cycle and elapsed < 1.0
    record(1, ok, f"round trip {rt / 1000:.3f} ns (800 +/- {cycle / 1000:.3f}), runtime {elapsed:.3f} s")


# 2-4 share one calibrated run of the shipped two-node scenario ---------------

@pytest.fixture(scope="module")
def stream_grid():
    doc = sc.load(sc.shipped("dredbox-2node"))
    doc["workloads"][0]["elements"] = 1_000_000
    t0 = time.process_time()
    cal = sc.run_calibration(doc, {"local_copy_mibs": 1060.0, "local_scale_mibs": 749.0,
                                   "elements": 1_000_000}, log=lambda s: None)
    t_cal = time.process_time() - t0
    doc["calibration"].update(port_bandwidth_mibs=cal.port_bandwidth_mibs, flop_ns=cal.flop_ns)
    doc.pop("calibrate")
    points = {}
    t_run = {}
    for kernel in ("copy", "scale", "sum", "triad"):
        for cores in (1, 2, 3, 4):
            for placement in ("local", "remote"):
                t1 = time.process_time()
                res, b = sc.stream_point(doc, cal, kernel, cores, placement)
                t_run[(kernel, cores, placement)] = time.process_time() - t1
                xs = [x for n in b.system.nodes.values() for x in n.bridge.xcvrs]
                payload = sum(x.tx_bytes for x in xs) / ((b.sim.now - b.ready_at) * 1e-12) / MiB
                points[(kernel, cores, placement)] = (res.bandwidth_mibs, payload)
    return {"cal": cal, "t_cal": t_cal, "points": points, "t_run": t_run}


def test_c02_copy_point(stream_grid):
    bw = stream_grid["points"][("copy", 1, "remote")][0]
    local = stream_grid["points"][("copy", 1, "local")][0]
    runtime = stream_grid["t_cal"] + stream_grid["t_run"][("copy", 1, "remote")]
    ok = 478 <= bw <= 646 and abs(local / 1060 - 1) <= 0.02 and runtime < 60
    record(2, ok, f"1-core remote copy {bw:.1f} MiB/s in [478, 646]; local {local:.1f}; "
                  f"calibrate+run {runtime:.1f} s")


def test_c03_saturation(stream_grid):
    pts = stream_grid["points"]
    agg = {k: pts[("copy", k, "remote")][0] for k in (1, 2, 3, 4)}
    # the link-level payload (both directions share the pipe) never exceeds the cap either
    link = max(p[1] for (kern, k, pl), p in pts.items() if pl == "remote")
    in_band = all(0.9 * LINK_MIBS <= agg[k] <= LINK_MIBS for k in (3, 4))
    never = all(v <= LINK_MIBS for v in agg.values()) and link <= LINK_MIBS * (1 + 1e-6)
    record(3, in_band and never,
           f"remote copy 3 cores {agg[3]:.1f}, 4 cores {agg[4]:.1f} MiB/s "
           f"({agg[3] / LINK_MIBS:.1%}, {agg[4] / LINK_MIBS:.1%} of {LINK_MIBS:.0f}); "
           f"max link payload {link:.1f}")


def test_c04_penalty_ordering(stream_grid):
    pts = stream_grid["points"]
    pen = {k: penalty(pts[(k, 1, "local")][0], pts[(k, 1, "remote")][0])
           for k in ("copy", "scale", "sum", "triad")}
    ok = (0.15 <= pen["scale"] <= 0.35 and pen["scale"] < pen["copy"]
          and pen["sum"] <= pen["copy"] and pen["triad"] <= pen["copy"])
    record(4, ok, "1-core penalties " + ", ".join(f"{k} {v:.1%}" for k, v in pen.items()))


# 5 ---------------------------------------------------------------------------

def _random_table(rng, aperture):
    k = int(rng.integers(1, 17))
    cuts = np.sort(rng.choice(aperture.size // 4096, size=2 * k, replace=False)) * 4096 + aperture.base
    slots = rng.permutation(16)[:k]
    table = MemportTable(0, 16, aperture)
    entries = []
    for i, s in enumerate(slots):
        region = AddressRegion(int(cuts[2 * i]), int(cuts[2 * i + 1] - cuts[2 * i]))
        e = MemportEntry(region, int(rng.integers(-2**40, 2**40)), int(rng.integers(0, 4)), 1,
                         int(rng.integers(0, 4)), bool(rng.random() < 0.85))
        table.set_slot(int(s), e)
        entries.append((int(s), e))
    return table, entries


def test_c05_translation_oracle():
    t0 = time.process_time()
    rng = np.random.default_rng(2024)
    aperture = AddressRegion(0x4_0000_0000, 448 << 30)
    addrs = rng.integers(aperture.base, aperture.end, size=100_000, dtype=np.uint64)
    addr_list = addrs.tolist()
    mismatches = checked = 0
    for _ in range(100):
        table, entries = _random_table(rng, aperture)
        # oracle: linear scan over every slot
        expect = np.full(len(addrs), -1)
        for s, e in entries:
            if e.enabled:
                expect[(addrs >= e.region.base) & (addrs < e.region.end)] = s
        find = table.find
        got = np.array([-1 if h is None else h[0] for h in map(find, addr_list)])
        mismatches += int((got != expect).sum())
        # translated address and routing tag through the steering path
        by_slot = dict(entries)
        for a, s in zip(addr_list[:1000], expect[:1000].tolist()):
            if s >= 0:
                f = steer(table.lookup(a)[1], Flit(BusChannel.READ_REQ, 0, 0, addr=a))
                e = by_slot[s]
                mismatches += (f.addr != a + e.offset) + (f.dest_port != e.dest_port) + (f.xcvr != e.xcvr)
        checked += len(addrs)
    elapsed = time.process_time() - t0
    record(5, mismatches == 0 and elapsed < 10,
           f"{checked} lookups over 100 tables, {mismatches} mismatches, {elapsed:.1f} s")


# 6 ---------------------------------------------------------------------------

def test_c06_conservation():
    t0 = time.process_time()
    doc = sc.load(sc.shipped("fairness-4masters"))
    b = sc.build(doc, 3, sc.resolve_calibration(doc))
    xs = [x for n in b.system.nodes.values() for x in n.bridge.xcvrs]
    target = 1_000_000
    sent = [0]

    def tap(f, t):
        sent[0] += 1
        if sent[0] >= target:
            b.sim.stop()

    for x in xs:
        x.tap = tap
    rnd = random.Random(6)
    patterns = {m: SyntheticPattern(rnd.choice(["uniform", "hotspot"]), b.segments[0].local,
                                    burst_len=rnd.choice([1, 4, 8, 16]), read_fraction=rnd.random(),
                                    window=rnd.choice([4, 8, 16]))
                for m in range(4)}
    synthetic_run(b.system, patterns, us(100_000), seed=6, drain=False)
    elapsed = time.process_time() - t0
    problems = []
    for x in xs:
        peer, _ = x.resolve(b.sim.now)
        if x.tx_flits != peer.rx_flits + x.in_flight:
            problems.append(f"link {x.key}->{peer.key}: {x.tx_flits} != {peer.rx_flits} + {x.in_flight}")
    for n in b.system.nodes.values():
        br = n.bridge
        injected = sum(p.injected for p in br.ports)
        staged = sum(len(x.edge) for x in br.xcvrs) + br.pipeline
        if injected != sum(x.tx_flits for x in br.xcvrs) + staged:
            problems.append(f"node {n.id}: injected {injected} != sent + staged")
        if br.stats.decode_errors:
            problems.append(f"node {n.id}: {br.stats.decode_errors} dropped")
        if any(x.edge.max_occupancy > x.edge.capacity for x in br.xcvrs):
            problems.append(f"node {n.id}: edge overflow")
    total = sum(x.tx_flits for x in xs)
    in_flight = sum(x.in_flight for x in xs)
    ok = not problems and total >= target and elapsed < 60
    record(6, ok, f"{total} flits, {in_flight} in flight at cutoff, 0 drops, 0 overflows, "
                  f"{elapsed:.1f} s" if not problems else "; ".join(problems[:3]))


# 7 ---------------------------------------------------------------------------

def test_c07_fairness_windows():
    doc = sc.load(sc.shipped("fairness-4masters"))
    b = sc.build(doc, 7, sc.resolve_calibration(doc))
    x = b.system.nodes[0].bridge.xcvrs[0]
    seq = []
    x.tap = lambda f, t: seq.append(f.src_master)
    w = doc["workloads"][0]
    pattern = sc._pattern(w["pattern"], b.segments[0].local)
    synthetic_run(b.system, {m: pattern for m in w["masters"]}, us(2000), seed=7)
    win = 10_000
    warm = win  # first window is warm-up
    counts = []
    for i in range(warm, len(seq) - win + 1, win):
        c = np.bincount(seq[i:i + win], minlength=4)
        counts.append(jain_index(c.tolist()))
    worst = min(counts) if counts else 0.0
    record(7, len(counts) >= 5 and worst >= 0.99,
           f"{len(counts)} windows of {win} flits, worst Jain {worst:.4f}")


# 8 ---------------------------------------------------------------------------

def test_c08_rate_limit():
    doc = sc.load(sc.shipped("dredbox-2node"))
    doc["calibration"].update(port_bandwidth_mibs=4096, flop_ns=0)
    doc.pop("calibrate")
    depth = 4096
    doc["rate_limits"] = [{"node": 0, "master": 0, "rate_mibs": 640, "depth": depth}]
    b = sc.build(doc, 1, sc.resolve_calibration(doc))
    p = SyntheticPattern("sequential", b.segments[0].local, read_fraction=0.0, window=16)
    bucket = b.system.nodes[0].bridge.master_ports[0].bucket
    t_start = bucket.last
    start = b.sim.now
    span = us(2000)
    synthetic_run(b.system, {0: p}, span, seed=1, drain=False)
    window = (b.sim.now - t_start) * 1e-12
    got = bucket.admitted_bytes / window / MiB
    bound = 640 + depth / window / MiB
    ok = got <= bound * 1.01 and got >= bound * 0.99 and b.sim.now >= start + span - us(1)
    record(8, ok, f"admitted {got:.3f} MiB/s, bound {bound:.3f} MiB/s (640 + depth/window)")


# 9 ---------------------------------------------------------------------------

def test_c09_determinism(tmp_path):
    doc = sc.load(sc.shipped("dredbox-2node"))
    doc["duration_us"] = 30
    doc["calibrate"]["elements"] = 1_000_000
    doc["workloads"][0]["kernels"] = ["copy", "triad"]
    doc["workloads"][0]["cores"] = [1, 4]
    small = tmp_path / "dredbox-small.json"
    small.write_text(json.dumps(doc))
    same = []
    for scen in (str(small), "fairness-4masters"):
        outs = []
        for k in range(2):
            out = tmp_path / f"run{k}"
            assert cli_main(["run", scen, "--out", str(out), "--deterministic-paths"]) == 0
            d = next((out).iterdir())
            leaf = next(d.iterdir())
            outs.append({f: (leaf / f).read_bytes() for f in ("results.csv", "results.json")})
        same.append(outs[0] == outs[1])
    record(9, all(same), f"two runs each of 2 scenarios byte-identical: {same}")


# 10 --------------------------------------------------------------------------

def test_c10_control_plane():
    t0 = time.process_time()
    trace_a = random_alloc_free(10, 1000)  # checks the partition after every step
    trace_b = random_alloc_free(10, 1000)
    allocs = sum(1 for t in trace_a if t[0] == "alloc")
    frees = sum(1 for t in trace_a if t[0] == "free")
    ok = trace_a == trace_b and allocs and frees
    record(10, bool(ok), f"1000 steps ({allocs} allocs, {frees} frees) match the first-fit oracle, "
                         f"replay identical, {time.process_time() - t0:.1f} s")


if __name__ == "__main__":
    code = pytest.main([__file__, "-q", "-p", "no:cacheprovider"])
    sys.exit(code)
