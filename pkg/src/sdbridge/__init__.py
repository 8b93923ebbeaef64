"""Transaction-level simulator of a software-defined memory bus bridge.

Compute nodes reach memory on other nodes through a bridge that tunnels bus
transactions over serial links and a circuit-switched fabric. Per-master
memport tables, programmed in band at runtime, decide which local address
ranges go where.
"""

from .bridge import Bridge, BridgeConfig, MemportEntry, RateLimiterConfig, SerdesLink, TokenBucket
from .bus import AddressRegion, Flit, Kind, MemoryMap, Transaction
from .calibrate import Calibration, Targets, calibrate
from .control import ControlPlane, FreePool, SegmentHandle
from .errors import ConfigError, ContractViolation, SimError
from .fabric import CircuitSwitch, Topology
from .metrics import RunMetrics, jain_index, penalty
from .sim import ClockDomain, Simulator
from .system import Node, System, build_two_node
from .workload import StreamKernelSpec, SyntheticPattern, stream_run, synthetic_run

__version__ = "0.1.0"
