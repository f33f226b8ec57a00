"""Exception hierarchy shared by every layer of the simulator."""


class QmpiSimError(Exception):
    """Base class for all simulator errors."""


class ConfigError(QmpiSimError, ValueError):
    pass


class ModelError(QmpiSimError, ValueError):
    pass


class CapacityError(QmpiSimError):
    pass


class AllocationError(QmpiSimError):
    pass


class DeallocationError(QmpiSimError):
    """A qubit was released while not in |0>; usually a missing uncompute."""


class GateError(QmpiSimError, ValueError):
    pass


class DimensionError(QmpiSimError, ValueError):
    pass


class LocalityError(QmpiSimError):
    """A multi-qubit local gate spans more than one node."""


class EprBufferError(QmpiSimError):
    """No free EPR-buffer slot at a node (the S parameter is too small)."""

    def __init__(self, message: str, rank=None):
        super().__init__(message)
        self.rank = rank


class ProtocolError(QmpiSimError):
    pass


class DeadlockError(QmpiSimError):
    def __init__(self, message, blocked=None):
        super().__init__(message)
        self.blocked = blocked or {}


class TraceError(QmpiSimError, ValueError):
    pass


class InfeasibleScheduleError(TraceError):
    """The trace cannot be scheduled with the given number of EPR-buffer slots."""
