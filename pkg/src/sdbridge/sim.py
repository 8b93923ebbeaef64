"""Deterministic discrete-event kernel.

Time is an integer count of picoseconds. Events are totally ordered by
``(time, priority, sequence)``; the sequence counter is unique per run, so two
runs of the same scenario dispatch the same trace bit for bit.
"""

from __future__ import annotations

import hashlib
import heapq
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable

import numpy as np

from .errors import ConfigError, PastTime

PS = 1
NS = 1_000
US = 1_000_000
MS = 1_000_000_000
S = 1_000_000_000_000

# Same-timestamp stage ordering: arrivals land before the cycle that consumes
# them, and the cycle consumes before new work is produced.
PRIO_ARRIVE = 0
PRIO_SERVICE = 1
PRIO_TICK = 2
PRIO_ISSUE = 3
PRIO_CONTROL = 4
PRIO_LATE = 9


def ns(x: float) -> int:
    return int(round(x * NS))


def us(x: float) -> int:
    return int(round(x * US))


@dataclass(frozen=True)
class ClockDomain:
    name: str
    frequency_hz: float
    phase_ps: int = 0
    _num: int = field(init=False, repr=False, compare=False)
    _den: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.frequency_hz > 0:
            raise ConfigError(f"clock {self.name!r}: frequency must be > 0")
        f = Fraction(str(self.frequency_hz))
        object.__setattr__(self, "_num", f.numerator)
        object.__setattr__(self, "_den", f.denominator)
        # edge(n) = phase + (n * _a + _b) // _c  (round half up of n * 1e12 / f)
        object.__setattr__(self, "_a", 2 * S * f.denominator)
        object.__setattr__(self, "_b", f.numerator)
        object.__setattr__(self, "_c", 2 * f.numerator)
        object.__setattr__(self, "_sd", S * f.denominator)

    @property
    def period_ps(self) -> Fraction:
        return Fraction(S * self._den, self._num)

    def cycles_to_time(self, n: int) -> int:
        """Duration of ``n`` cycles, rounded to the nearest picosecond."""
        return (n * self._a + self._b) // self._c

    def edge(self, n: int) -> int:
        return self.phase_ps + (n * self._a + self._b) // self._c

    def cycle_at(self, t: int) -> int:
        """Index of the first edge at or after ``t``."""
        d = t - self.phase_ps
        if d <= 0:
            return 0
        a, b, c = self._a, self._b, self._c
        n = -((-d * self._num) // self._sd)
        while n > 0 and ((n - 1) * a + b) // c >= d:
            n -= 1
        while (n * a + b) // c < d:
            n += 1
        return n

    def next_edge(self, t: int) -> int:
        return self.edge(self.cycle_at(t))


def cycles_to_time(domain: ClockDomain, n: int) -> int:
    return domain.cycles_to_time(n)


class Rng:
    """Counter-based (Philox) generator: identical stream on every platform."""

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFF_FFFF_FFFF_FFFF
        self.gen = np.random.Generator(np.random.Philox(key=self.seed))

    def child(self, key: int) -> "Rng":
        ss = np.random.SeedSequence([self.seed, int(key)])
        return Rng(int(ss.generate_state(1, np.uint64)[0]))

    def random(self) -> float:
        return float(self.gen.random())

    def integers(self, low: int, high: int) -> int:
        return int(self.gen.integers(low, high))


def derive_seed(master: int, *keys) -> int:
    """Stable seed for a sub-run, independent of execution order."""
    h = hashlib.blake2b(digest_size=8)
    h.update(struct.pack("<Q", int(master) & 0xFFFF_FFFF_FFFF_FFFF))
    for k in keys:
        h.update(repr(k).encode())
    return int.from_bytes(h.digest(), "little")


class Handle:
    __slots__ = ("entry",)

    def __init__(self, entry):
        self.entry = entry

    @property
    def time(self) -> int:
        return self.entry[0]

    @property
    def pending(self) -> bool:
        return self.entry[3] is not None

    def cancel(self) -> bool:
        if self.entry[3] is None:
            return False
        self.entry[3] = None
        return True


@dataclass
class Event:
    fire_time: int
    handler: Callable[..., Any]
    args: tuple = ()
    priority: int = PRIO_SERVICE


class Simulator:
    def __init__(self, seed: int = 0, trace: bool = False):
        self.now = 0
        self.rng = Rng(seed)
        self._queue: list = []
        self._seq = 0
        self.scheduled = 0
        self.dispatched = 0
        self.cancelled = 0
        self._stopped = False
        self._trace = hashlib.blake2b(digest_size=16) if trace else None

    def schedule(self, event: Event) -> Handle:
        return self.at(event.fire_time, event.handler, *event.args, priority=event.priority)

    def at(self, t: int, fn: Callable, *args, priority: int = PRIO_SERVICE) -> Handle:
        if t < self.now:
            raise PastTime(f"event at {t} ps scheduled at now={self.now} ps")
        entry = [t, priority, self._seq, fn, args]
        self._seq += 1
        self.scheduled += 1
        heapq.heappush(self._queue, entry)
        return Handle(entry)

    def post(self, t: int, fn: Callable, *args, priority: int = PRIO_SERVICE) -> None:
        """``at`` without a cancellation handle (hot paths)."""
        if t < self.now:
            raise PastTime(f"event at {t} ps scheduled at now={self.now} ps")
        heapq.heappush(self._queue, [t, priority, self._seq, fn, args])
        self._seq += 1
        self.scheduled += 1

    def after(self, dt: int, fn: Callable, *args, priority: int = PRIO_SERVICE) -> Handle:
        return self.at(self.now + dt, fn, *args, priority=priority)

    def stop(self) -> None:
        self._stopped = True

    def pending(self) -> int:
        return sum(1 for e in self._queue if e[3] is not None)

    def peek(self) -> int | None:
        q = self._queue
        while q and q[0][3] is None:
            heapq.heappop(q)
            self.cancelled += 1
        return q[0][0] if q else None

    def run_until(self, t_end: int) -> int:
        """Dispatch every event with fire time <= ``t_end``.

        Returns the fire time of the last event dispatched by this call, or
        ``now`` unchanged when nothing fired.
        """
        q = self._queue
        pop = heapq.heappop
        trace = self._trace
        last = self.now
        self._stopped = False
        while q and not self._stopped:
            entry = q[0]
            if entry[0] > t_end:
                break
            pop(q)
            fn = entry[3]
            if fn is None:
                self.cancelled += 1
                continue
            entry[3] = None
            self.now = last = entry[0]
            self.dispatched += 1
            if trace is not None:
                trace.update(struct.pack("<QiQ", entry[0], entry[1], entry[2]))
                trace.update(fn.__qualname__.encode())
            fn(*entry[4])
        return last

    def run(self) -> int:
        return self.run_until(2**63)

    def trace_digest(self) -> str | None:
        return self._trace.hexdigest() if self._trace is not None else None
