"""Run statistics, derived comparisons and CSV/JSON export."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

CSV_COLUMNS = ("scenario", "kernel", "cores", "placement", "bandwidth_mibs", "mean_latency_ns",
               "p99_latency_ns", "link_util", "penalty")

HIST_LO_NS = 100.0
HIST_HI_NS = 100_000.0
HIST_BUCKETS = 32
SATURATION = 0.95


def bucket_edges(lo: float = HIST_LO_NS, hi: float = HIST_HI_NS, n: int = HIST_BUCKETS) -> list[float]:
    r = (hi / lo) ** (1.0 / n)
    return [lo * r**i for i in range(n + 1)]


def histogram(latencies_ns, lo: float = HIST_LO_NS, hi: float = HIST_HI_NS,
              n: int = HIST_BUCKETS) -> list[int]:
    """Log-spaced bucket counts; values outside [lo, hi) land in the end buckets."""
    counts = [0] * n
    step = math.log(hi / lo) / n
    for v in latencies_ns:
        i = int(math.log(v / lo) / step) if v > lo else 0
        counts[min(max(i, 0), n - 1)] += 1
    return counts


def percentile(values, q: float) -> float:
    """Nearest-rank percentile (q in [0, 100])."""
    if not values:
        return 0.0
    s = sorted(values)
    k = max(0, math.ceil(q / 100 * len(s)) - 1)
    return float(s[k])


def penalty(local: float, remote: float) -> float:
    if not local > 0:
        raise ValueError(f"local bandwidth must be > 0, got {local}")
    return 1.0 - remote / local


def jain_index(xs) -> float:
    xs = list(xs)
    sq = sum(x * x for x in xs)
    if not xs or sq == 0:
        return 1.0
    return sum(xs) ** 2 / (len(xs) * sq)


def saturation_core_count(aggregate_by_cores: dict[int, float], link_mibs: float) -> int | None:
    """Smallest core count whose aggregate reaches 95% of the link payload rate."""
    if not math.isfinite(link_mibs) or link_mibs <= 0:
        return None
    for k in sorted(aggregate_by_cores):
        if aggregate_by_cores[k] >= SATURATION * link_mibs:
            return k
    return None


@dataclass
class Comparison:
    local: float
    remote: float
    link_mibs: float = math.inf

    @property
    def penalty(self) -> float:
        return penalty(self.local, self.remote)

    @property
    def saturated(self) -> bool:
        return math.isfinite(self.link_mibs) and self.remote >= SATURATION * self.link_mibs


@dataclass
class Row:
    scenario: str
    kernel: str
    cores: int
    placement: str
    bandwidth_mibs: float
    mean_latency_ns: float
    p99_latency_ns: float
    link_util: float
    penalty: float | None = None

    def cells(self) -> list[str]:
        def f(x):
            return "" if x is None else f"{x:.6f}"
        return [self.scenario, self.kernel, str(self.cores), self.placement, f(self.bandwidth_mibs),
                f(self.mean_latency_ns), f(self.p99_latency_ns), f(self.link_util), f(self.penalty)]


@dataclass
class RunMetrics:
    scenario: str
    seed: int
    rows: list = field(default_factory=list)
    histograms: dict = field(default_factory=dict)  # row key -> bucket counts
    counters: dict = field(default_factory=dict)

    def add(self, row: Row, latencies_ns=(), counters: dict | None = None) -> None:
        self.rows.append(row)
        key = row_key(row)
        self.histograms[key] = histogram(latencies_ns)
        if counters:
            self.counters[key] = counters

    def pair_penalties(self) -> None:
        """Fill the penalty column of each remote row from its local twin."""
        local = {(r.scenario, r.kernel, r.cores): r.bandwidth_mibs
                 for r in self.rows if r.placement == "local"}
        for r in self.rows:
            if r.placement == "remote":
                bw = local.get((r.scenario, r.kernel, r.cores))
                r.penalty = penalty(bw, r.bandwidth_mibs) if bw else None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow(r.cells())
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "scenario": self.scenario,
            "seed": self.seed,
            "histogram_edges_ns": bucket_edges(),
            "rows": [asdict(r) for r in self.rows],
            "histograms": self.histograms,
            "counters": self.counters,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunMetrics":
        d = json.loads(text)
        return cls(d["scenario"], d["seed"], [Row(**r) for r in d["rows"]], d["histograms"],
                   d["counters"])


def row_key(r: Row) -> str:
    return f"{r.scenario}/{r.kernel}/{r.cores}/{r.placement}"


def merge_csv(metrics: list[RunMetrics]) -> str:
    rows = [r for m in metrics for r in m.rows]
    merged = RunMetrics("merged", 0, rows)
    return merged.to_csv()


def export(metrics: RunMetrics, path, fmt: str = "csv") -> None:
    text = {"csv": metrics.to_csv, "json": metrics.to_json}[fmt]()
    with open(path, "w", newline="") as fh:
        fh.write(text)
