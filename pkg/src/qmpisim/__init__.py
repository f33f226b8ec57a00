"""Simulator for quantum message passing on a distributed quantum machine."""

from .errors import (
    AllocationError, CapacityError, ConfigError, DeadlockError, DeallocationError,
    DimensionError, EprBufferError, GateError, InfeasibleScheduleError, LocalityError,
    ModelError, ProtocolError, QmpiSimError, TraceError,
)
from .machine import (
    Communicator, Machine, MachineConfig, QubitRef, RankContext, RankProgram,
    ResourceLedger, RunResult, SlotClass, create_machine, enforce_locality, run_programs,
)
from .sendq import CostReport, EventTrace, SendqParams, evaluate_trace
from .statevec import Gate, StateVector, fidelity

__version__ = "0.1.0"
