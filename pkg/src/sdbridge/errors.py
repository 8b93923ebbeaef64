"""Exception hierarchy.

``ContractViolation`` subclasses abort a run: they mean the modelled hardware
was driven outside its operating contract (usually a control-plane or
simulator bug), and the CLI maps them to exit code 2.
"""


class SimError(Exception):
    pass


class ConfigError(SimError, ValueError):
    """Invalid static configuration (caught before a run starts)."""


class PastTime(SimError):
    pass


# bus
class UnmappedAddress(SimError):
    pass


class NoRoute(SimError):
    """No enabled memport entry matches an address."""


# control plane
class OutOfMemory(SimError):
    pass


class OutOfAperture(SimError):
    pass


class NoPath(SimError):
    pass


class Busy(SimError):
    pass


class BadSlot(SimError):
    pass


class InvalidMap(SimError, ValueError):
    pass


# workload / calibration
class Misplacement(SimError):
    pass


class Unreachable(SimError):
    pass


class ContractViolation(SimError):
    contract = "contract"


class ProtocolViolation(ContractViolation):
    contract = "protocol"


class Overflow(ContractViolation):
    contract = "edge-buffer overflow"


class NoCircuit(ContractViolation):
    contract = "no circuit"


class UnknownDestination(ContractViolation):
    contract = "unknown destination"
