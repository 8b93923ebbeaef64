"""Deterministic calibration of the local-memory baseline.

The model has no per-core microarchitecture, so two constants are fitted to
measured (or derived) local numbers: the slave port bandwidth sets local
copy, the per-flop latency then sets local scale. Slave latency is held.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .errors import Unreachable

TOLERANCE = 0.02


@dataclass(frozen=True)
class Calibration:
    slave_latency_ns: float = 60.0
    port_bandwidth_mibs: float = 1060.0
    flop_ns: float = 0.0
    window: int = 4


@dataclass(frozen=True)
class Targets:
    local_copy_mibs: float
    local_scale_mibs: float | None = None


def bisect(fn, target: float, lo: float, hi: float, *, increasing: bool, iterations: int,
           log: bool = False) -> float:
    """Fixed-budget bisection for ``fn(x) == target`` on a monotone ``fn``."""
    f = (lambda x: fn(x) - target) if increasing else (lambda x: target - fn(x))
    a, b = (math.log(lo), math.log(hi)) if log else (lo, hi)
    conv = math.exp if log else (lambda x: x)
    for _ in range(iterations):
        mid = (a + b) / 2
        if f(conv(mid)) < 0:
            a = mid
        else:
            b = mid
    return conv((a + b) / 2)


def calibrate(measure, targets: Targets, base: Calibration = Calibration(), *,
              iterations: int = 18, bw_bounds=(16.0, 65536.0), flop_bounds=(0.0, 1000.0)) -> Calibration:
    """Fit ``base`` to ``targets``.

    ``measure(calibration, kernel) -> MiB/s`` runs one local single-core
    kernel. Raises :class:`Unreachable` when a target lies outside what the
    model can produce within the search bounds or tolerance.
    """
    if not targets.local_copy_mibs > 0:
        raise Unreachable(f"local copy target must be > 0, got {targets.local_copy_mibs}")
    if targets.local_scale_mibs is not None and not targets.local_scale_mibs > 0:
        raise Unreachable(f"local scale target must be > 0, got {targets.local_scale_mibs}")

    def copy_at(bw):
        return measure(replace(base, port_bandwidth_mibs=bw, flop_ns=0.0), "copy")

    lo_bw, hi_bw = bw_bounds
    if not copy_at(lo_bw) <= targets.local_copy_mibs <= copy_at(hi_bw):
        raise Unreachable(f"local copy {targets.local_copy_mibs} MiB/s is outside the model's range "
                          f"for port bandwidth in [{lo_bw}, {hi_bw}] MiB/s")
    bw = bisect(copy_at, targets.local_copy_mibs, lo_bw, hi_bw, increasing=True,
                iterations=iterations, log=True)
    cal = replace(base, port_bandwidth_mibs=round(bw, 3), flop_ns=0.0)
    got = measure(cal, "copy")
    if abs(got / targets.local_copy_mibs - 1) > TOLERANCE:
        raise Unreachable(f"local copy settles at {got:.1f} MiB/s, not within 2% of {targets.local_copy_mibs}")

    if targets.local_scale_mibs is None:
        return cal

    def scale_at(f):
        return measure(replace(cal, flop_ns=f), "scale")

    lo_f, hi_f = flop_bounds
    if not scale_at(hi_f) <= targets.local_scale_mibs <= scale_at(lo_f):
        raise Unreachable(f"local scale {targets.local_scale_mibs} MiB/s is outside the model's range "
                          f"for flop latency in [{lo_f}, {hi_f}] ns")
    f = bisect(scale_at, targets.local_scale_mibs, lo_f, hi_f, increasing=False, iterations=iterations)
    cal = replace(cal, flop_ns=round(f, 4))
    got = measure(cal, "scale")
    if abs(got / targets.local_scale_mibs - 1) > TOLERANCE:
        raise Unreachable(f"local scale settles at {got:.1f} MiB/s, not within 2% of {targets.local_scale_mibs}")
    return cal
