"""The distributed machine: nodes, slots, communicators and the scheduler.

All nodes share one global state vector; node locality is metadata checked
on every local gate.  Rank programs are generator functions taking a
:class:`RankContext`.  Local operations run immediately, blocking calls
(EPR establishment, classical receives) are written ``yield from ...`` and
are resolved by a deterministic round-robin scheduler that rendezvouses on
``(source, dest, tag, communicator)``.

Qubits are materialized in the state vector lazily, on first use, so freshly
allocated ``|0>`` qubits cost nothing until touched.
"""

from __future__ import annotations

import enum
import inspect
from collections import defaultdict, deque
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Optional, Sequence

import numpy as np

from . import sendq
from .errors import (
    AllocationError,
    ConfigError,
    DeadlockError,
    DimensionError,
    EprBufferError,
    GateError,
    LocalityError,
    ProtocolError,
)
from .sendq import Event, EventTrace
from .statevec import CNOT, FREE_TOL, Gate, H, StateVector, X, default_max_qubits


class SlotClass(enum.Enum):
    COMPUTE = "compute"
    EPR_BUFFER = "epr_buffer"


@dataclass(frozen=True)
class QubitRef:
    rank: int
    local_index: int
    slot_class: SlotClass = SlotClass.COMPUTE

    def __str__(self):
        tag = "q" if self.slot_class is SlotClass.COMPUTE else "e"
        return f"{tag}{self.rank}.{self.local_index}"


@dataclass(frozen=True)
class Communicator:
    ranks: tuple

    def __post_init__(self):
        object.__setattr__(self, "ranks", tuple(self.ranks))
        if not self.ranks:
            raise ConfigError("communicator must contain at least one rank")
        if len(set(self.ranks)) != len(self.ranks):
            raise ConfigError(f"communicator has repeated ranks: {self.ranks}")

    @property
    def size(self) -> int:
        return len(self.ranks)

    def index(self, rank: int) -> int:
        try:
            return self.ranks.index(rank)
        except ValueError:
            raise ProtocolError(f"rank {rank} is not in communicator {self.ranks}") from None

    def __contains__(self, rank):
        return rank in self.ranks


@dataclass
class MachineConfig:
    num_nodes: int
    compute_qubits_per_node: int
    epr_slots_per_node: int
    max_total_qubits: int = field(default_factory=default_max_qubits)
    seed: int = 0

    def validate(self):
        if self.num_nodes < 1:
            raise ConfigError(f"need at least one node, got N={self.num_nodes}")
        if self.compute_qubits_per_node < 1:
            raise ConfigError(f"need Q >= 1, got {self.compute_qubits_per_node}")
        if self.epr_slots_per_node < 0:
            raise ConfigError(f"need S >= 0, got {self.epr_slots_per_node}")
        total = self.num_nodes * (self.compute_qubits_per_node + self.epr_slots_per_node)
        if total > self.max_total_qubits:
            raise ConfigError(
                f"N*(Q+S) = {total} exceeds the simulator cap of {self.max_total_qubits} qubits"
            )

    @property
    def addressable_slots(self) -> int:
        return self.num_nodes * (self.compute_qubits_per_node + self.epr_slots_per_node)


@dataclass
class ResourceLedger:
    epr_pairs_consumed: int = 0
    classical_bits_sent: int = 0
    fixup_bits: int = 0
    breakdown: dict = field(default_factory=dict)

    def add(self, label: str, epr: int = 0, bits: int = 0, fixup: int = 0):
        self.epr_pairs_consumed += epr
        self.classical_bits_sent += bits
        self.fixup_bits += fixup
        row = self.breakdown.setdefault(label, [0, 0, 0])
        row[0] += epr
        row[1] += bits
        row[2] += fixup

    def snapshot(self) -> "ResourceLedger":
        return ResourceLedger(
            self.epr_pairs_consumed,
            self.classical_bits_sent,
            self.fixup_bits,
            {k: list(v) for k, v in self.breakdown.items()},
        )

    def __sub__(self, other: "ResourceLedger") -> "ResourceLedger":
        out = ResourceLedger(
            self.epr_pairs_consumed - other.epr_pairs_consumed,
            self.classical_bits_sent - other.classical_bits_sent,
            self.fixup_bits - other.fixup_bits,
        )
        for k, row in self.breakdown.items():
            base = other.breakdown.get(k, [0, 0, 0])
            diff = [a - b for a, b in zip(row, base)]
            if any(diff):
                out.breakdown[k] = diff
        return out

    @property
    def totals(self) -> tuple:
        return (self.epr_pairs_consumed, self.classical_bits_sent)

    def to_dict(self) -> dict:
        return {
            "epr_pairs": self.epr_pairs_consumed,
            "classical_bits": self.classical_bits_sent,
            "fixup_bits": self.fixup_bits,
            "breakdown": {k: {"epr": v[0], "bits": v[1], "fixup_bits": v[2]}
                          for k, v in sorted(self.breakdown.items())},
        }


@dataclass(frozen=True)
class Message:
    value: int
    event: int
    bits: int = 1


@dataclass
class EprEntry:
    slot: QubitRef
    peer: int
    tag: Any
    comm: Communicator
    label: str
    done: bool = False


@dataclass
class _EprRequest:
    rank: int
    entries: list

    def describe(self):
        return ", ".join(f"prepare_epr(peer={e.peer}, tag={e.tag!r})" for e in self.entries if not e.done)


@dataclass
class _RecvRequest:
    rank: int
    src: int
    tag: Any
    comm: Communicator

    def describe(self):
        return f"recv_bits(src={self.src}, tag={self.tag!r})"


@dataclass
class RankProgram:
    """``body(ctx)`` is a generator function (or a plain function) for one rank."""

    rank: int
    body: Callable


@dataclass
class RunResult:
    returns: dict
    trace: EventTrace
    ledger: ResourceLedger

    def cost(self, params) -> sendq.CostReport:
        return sendq.evaluate_trace(self.trace, params)


def enforce_locality(machine: "Machine", gate: Gate, qubit_refs: Sequence[QubitRef]) -> None:
    """Raise LocalityError unless every qubit lives on the same node."""
    ranks = {q.rank for q in qubit_refs}
    if len(ranks) > 1:
        raise LocalityError(
            f"{gate} spans nodes {sorted(ranks)}; use QMPI communication instead"
        )


class Machine:
    def __init__(self, config: MachineConfig):
        config.validate()
        self.config = config
        self.state = StateVector(0, max_qubits=config.max_total_qubits)
        self.rng = np.random.default_rng(np.random.SeedSequence(config.seed))
        self.ledger = ResourceLedger()
        self.world = Communicator(tuple(range(config.num_nodes)))
        self.registry: dict = {}
        self._events: list = []
        self._live: set = set()
        self._order: list = []
        self._pos: dict = {}
        self._last: dict = {}
        self._outstanding = defaultdict(list)
        self._batch = defaultdict(list)
        self._free_compute = {r: list(range(config.compute_qubits_per_node))
                              for r in range(config.num_nodes)}
        self._free_buffer = {r: list(range(config.epr_slots_per_node))
                             for r in range(config.num_nodes)}
        self._mailbox = defaultdict(deque)
        self._epr_pending: dict = {}
        self._coll_seq = defaultdict(int)

    @property
    def num_nodes(self) -> int:
        return self.config.num_nodes

    @property
    def trace(self) -> EventTrace:
        return EventTrace(list(self._events))

    @property
    def live_qubits(self) -> set:
        return set(self._live)

    # -- allocation -------------------------------------------------------

    def _check_rank(self, rank):
        if not 0 <= rank < self.num_nodes:
            raise ConfigError(f"rank {rank} outside 0..{self.num_nodes - 1}")

    def alloc_local(self, rank: int, n: int = 1) -> list:
        self._check_rank(rank)
        free = self._free_compute[rank]
        if n < 1 or n > len(free):
            raise AllocationError(
                f"rank {rank} has {len(free)} free compute qubit(s), requested {n}"
            )
        refs = [QubitRef(rank, free.pop(0), SlotClass.COMPUTE) for _ in range(n)]
        self._live.update(refs)
        return refs

    def epr_slot_acquire(self, rank: int) -> QubitRef:
        self._check_rank(rank)
        free = self._free_buffer[rank]
        if not free:
            raise EprBufferError(
                f"rank {rank}: all {self.config.epr_slots_per_node} EPR-buffer slot(s) occupied",
                rank=rank,
            )
        ref = QubitRef(rank, free.pop(0), SlotClass.EPR_BUFFER)
        self._live.add(ref)
        return ref

    def occupied_epr_slots(self, rank: int) -> int:
        return self.config.epr_slots_per_node - len(self._free_buffer[rank])

    def free(self, refs: Iterable[QubitRef]) -> None:
        refs = list(refs)
        for ref in refs:
            self._require_live(ref)
        positions = [self._pos[r] for r in refs if r in self._pos]
        if positions:
            self.state.free_qubits(positions)
            self._order = [r for r in self._order if r not in set(refs)]
            self._pos = {r: i for i, r in enumerate(self._order)}
        for ref in refs:
            self._live.discard(ref)
            last = self._last.pop(ref, None)
            if ref.slot_class is SlotClass.EPR_BUFFER:
                if last is not None:
                    self._events[last].releases.append(ref.rank)
                pool = self._free_buffer[ref.rank]
            else:
                pool = self._free_compute[ref.rank]
            pool.append(ref.local_index)
            pool.sort()

    def _require_live(self, ref):
        if ref not in self._live:
            raise AllocationError(f"qubit {ref} is not allocated")

    def _materialize(self, ref) -> int:
        self._require_live(ref)
        pos = self._pos.get(ref)
        if pos is None:
            pos = self.state.alloc_qubits(1)[0]
            self._pos[ref] = pos
            self._order.append(ref)
        return pos

    def is_zero(self, ref) -> bool:
        self._require_live(ref)
        if ref not in self._pos:
            return True
        return self.state.probability_one(self._pos[ref]) < FREE_TOL ** 2

    # -- raw state access (tests, apps) ----------------------------------

    def _permuted(self, refs):
        refs = list(refs)
        if len(set(refs)) != len(refs):
            raise DimensionError("repeated qubit")
        for r in refs:
            self._materialize(r)
        others = [r for r in self._order if r not in set(refs)]
        order = refs + others
        n = len(order)
        psi = self.state.amps.reshape([2] * n) if n else self.state.amps
        # axis of qubit at position p is n-1-p; new bit i <- order[i]
        axes = [n - 1 - self._pos[r] for r in reversed(order)]
        return np.transpose(psi, axes).reshape(-1) if n else psi.copy(), len(refs), others

    def get_state(self, refs: Sequence[QubitRef]) -> np.ndarray:
        """Amplitudes over ``refs`` (refs[i] is bit i); all other qubits must be |0>."""
        flat, k, others = self._permuted(refs)
        block = flat.reshape(-1, 1 << k)
        if np.max(np.abs(block[1:]), initial=0.0) > FREE_TOL:
            raise DimensionError(
                f"qubits outside the requested set are not in |0>: {[str(r) for r in others]}"
            )
        return block[0].copy()

    def set_state(self, refs: Sequence[QubitRef], amps) -> None:
        """Overwrite the joint state of ``refs``; every other qubit must be |0>."""
        amps = np.asarray(amps, dtype=complex).ravel()
        refs = list(refs)
        if amps.size != 1 << len(refs):
            raise DimensionError(f"{amps.size} amplitudes for {len(refs)} qubits")
        self.get_state(refs)  # checks the other qubits are |0>
        others = [r for r in self._order if r not in set(refs)]
        full = np.zeros(1 << (len(refs) + len(others)), dtype=complex)
        full[: amps.size] = amps / np.linalg.norm(amps)
        self.state.amps = full
        self._order = refs + others
        self._pos = {r: i for i, r in enumerate(self._order)}

    # -- event recording ---------------------------------------------------

    def _record(self, kind, ranks, qubits=(), after=(), fence=False, **attrs) -> int:
        deps = set(after)
        for q in qubits:
            if q in self._last:
                deps.add(self._last[q])
        if fence:
            for r in ranks:
                deps.update(self._outstanding[r])
        eid = len(self._events)
        deps.discard(eid)
        self._events.append(Event(eid, kind, tuple(ranks), tuple(sorted(deps)), **attrs))
        for q in qubits:
            self._last[q] = eid
        for r in ranks:
            # EPRs issued back to back share one fence base
            if fence:
                self._batch[r].append(eid)
            else:
                if self._batch[r]:
                    self._outstanding[r] = self._batch.pop(r)
                self._outstanding[r].append(eid)
        return eid

    # -- quantum operations used by contexts --------------------------------

    def _apply(self, rank, gate: Gate, qubits, fixup=False, after=(), condition=True):
        enforce_locality(self, gate, qubits)
        if qubits[0].rank != rank:
            raise LocalityError(f"rank {rank} cannot act on {qubits[0]} owned by rank {qubits[0].rank}")
        if len(qubits) != gate.arity:
            raise GateError(f"{gate} acts on {gate.arity} qubit(s), got {len(qubits)}")
        for q in qubits:
            self._require_live(q)
        if condition:
            positions = [self._materialize(q) for q in qubits]
            self.state.apply_gate(gate, positions)
        return self._record(
            sendq.GATE, (rank,), qubits, after=after, gate=gate.name,
            is_rotation=gate.is_rotation and not fixup, is_fixup=fixup,
        )

    def _measure(self, rank, ref) -> int:
        if ref.rank != rank:
            raise LocalityError(f"rank {rank} cannot measure {ref}")
        self._require_live(ref)
        bit = self.state.measure(self._pos[ref], self.rng) if ref in self._pos else 0
        self._record(sendq.MEASURE, (rank,), (ref,))
        return bit

    def _establish(self, a: EprEntry, rank_a: int, b: EprEntry, rank_b: int):
        pa, pb = self._materialize(a.slot), self._materialize(b.slot)
        for p, ref in ((pa, a.slot), (pb, b.slot)):
            if self.state.probability_one(p) > FREE_TOL ** 2:
                raise ProtocolError(f"EPR half {ref} is not a fresh |0> qubit")
        self.state.apply_gate(H, [pa])
        self.state.apply_gate(CNOT, [pa, pb])
        self._record(sendq.EPR, (rank_a, rank_b), (a.slot, b.slot), fence=True, label=a.label)
        self.ledger.add(a.label, epr=1)
        a.done = b.done = True

    def next_collective_tag(self, rank: int, comm: Communicator, name: str):
        key = (rank, comm)
        self._coll_seq[key] += 1
        return ("coll", name, self._coll_seq[key])

    # -- scheduler ---------------------------------------------------------

    def _post(self, req):
        if isinstance(req, _EprRequest):
            for e in req.entries:
                key = (req.rank, e.peer, e.tag, e.comm)
                peer_key = (e.peer, req.rank, e.tag, e.comm)
                other = self._epr_pending.pop(peer_key, None)
                if other is not None:
                    self._establish(other, e.peer, e, req.rank)
                elif key in self._epr_pending:
                    raise ProtocolError(f"rank {req.rank}: duplicate prepare_epr {key[1:3]}")
                else:
                    self._epr_pending[key] = e

    def _try_complete(self, req):
        if isinstance(req, _EprRequest):
            return all(e.done for e in req.entries), None
        box = self._mailbox[(req.src, req.rank, req.tag, req.comm)]
        if box:
            return True, box.popleft()
        return False, None

    def run_programs(self, programs: Sequence[RankProgram]) -> RunResult:
        start = len(self._events)
        before = self.ledger.snapshot()
        runners = {}
        for prog in programs:
            self._check_rank(prog.rank)
            if prog.rank in runners:
                raise ConfigError(f"two programs for rank {prog.rank}")
            ctx = RankContext(self, prog.rank)
            out = prog.body(ctx)
            runners[prog.rank] = {"gen": out if inspect.isgenerator(out) else None,
                                  "result": None if inspect.isgenerator(out) else out,
                                  "request": None, "started": False}
        order = sorted(runners)
        while True:
            progressed = False
            for r in order:
                st = runners[r]
                if st["gen"] is None:
                    continue
                value = None
                if st["request"] is not None:
                    ok, value = self._try_complete(st["request"])
                    if not ok:
                        continue
                    st["request"] = None
                progressed = True
                while True:
                    try:
                        req = st["gen"].send(value)
                    except StopIteration as stop:
                        st["result"] = stop.value
                        st["gen"] = None
                        break
                    self._post(req)
                    ok, value = self._try_complete(req)
                    if not ok:
                        st["request"] = req
                        break
            if all(runners[r]["gen"] is None for r in order):
                break
            if not progressed:
                blocked = {r: runners[r]["request"].describe() for r in order
                           if runners[r]["gen"] is not None}
                detail = "; ".join(f"rank {r}: {d}" for r, d in blocked.items())
                self._epr_pending.clear()
                raise DeadlockError(f"all runnable ranks are blocked: {detail}", blocked)
        leftovers = {k: len(v) for k, v in self._mailbox.items() if v}
        if leftovers or self._epr_pending:
            desc = [f"{n} message(s) src={k[0]} dest={k[1]} tag={k[2]!r}" for k, n in leftovers.items()]
            desc += [f"prepare_epr rank={k[0]} peer={k[1]} tag={k[2]!r}" for k in self._epr_pending]
            self._mailbox.clear()
            self._epr_pending.clear()
            raise ProtocolError("unmatched communication at termination: " + "; ".join(desc))
        return RunResult(
            returns={r: runners[r]["result"] for r in order},
            trace=self.trace.since(start),
            ledger=self.ledger - before,
        )


def create_machine(config: MachineConfig) -> Machine:
    return Machine(config)


def run_programs(machine: Machine, programs: Sequence[RankProgram]) -> RunResult:
    return machine.run_programs(programs)


class RankContext:
    """The view of the machine a single rank program works through."""

    def __init__(self, machine: Machine, rank: int):
        self.machine = machine
        self.rank = rank
        self._labels = ["app"]

    @property
    def world(self) -> Communicator:
        return self.machine.world

    @property
    def size(self) -> int:
        return self.machine.num_nodes

    @property
    def label(self) -> str:
        return self._labels[-1]

    @contextmanager
    def primitive(self, label: str):
        self._labels.append(label)
        try:
            yield
        finally:
            self._labels.pop()

    @property
    def last_event(self) -> Optional[int]:
        out = self.machine._batch.get(self.rank) or self.machine._outstanding[self.rank]
        return out[-1] if out else None

    # local resources
    def alloc(self, n: int = 1) -> list:
        return self.machine.alloc_local(self.rank, n)

    def free(self, *refs: QubitRef):
        for ref in refs:
            if ref.rank != self.rank:
                raise LocalityError(f"rank {self.rank} cannot free {ref}")
        self.machine.free(refs)

    def acquire_epr_slot(self) -> QubitRef:
        return self.machine.epr_slot_acquire(self.rank)

    # local gates
    def apply(self, gate: Gate, *qubits: QubitRef) -> int:
        return self.machine._apply(self.rank, gate, list(qubits))

    def h(self, q):
        return self.apply(H, q)

    def x(self, q):
        return self.apply(X, q)

    def cnot(self, control, target):
        return self.apply(CNOT, control, target)

    def fixup(self, gate: Gate, qubit: QubitRef, condition: bool, after: Iterable = ()) -> int:
        """Classically controlled correction; recorded whether or not it fires."""
        deps = [m.event if isinstance(m, Message) else m for m in after]
        return self.machine._apply(self.rank, gate, [qubit], fixup=True, after=deps,
                                   condition=bool(condition))

    def measure(self, q: QubitRef) -> int:
        return self.machine._measure(self.rank, q)

    def measure_and_free(self, q: QubitRef) -> int:
        """Measure, reset to |0> (untracked classical bookkeeping) and release."""
        bit = self.measure(q)
        if bit:
            pos = self.machine._materialize(q)
            self.machine.state.apply_gate(X, [pos])
        self.free(q)
        return bit

    def swap_into(self, half: QubitRef, fresh: QubitRef):
        """Move the state of ``half`` into the fresh qubit ``fresh`` and release ``half``."""
        if not self.machine.is_zero(fresh):
            raise ProtocolError(f"receiving qubit {fresh} is not a fresh |0> qubit")
        self.cnot(half, fresh)
        self.cnot(fresh, half)
        self.free(half)

    # classical communication
    def send_bits(self, dest: int, value: int, tag, comm: Communicator = None, nbits: int = 1,
                  after: Iterable = (), fixup: bool = False) -> Message:
        comm = comm or self.world
        comm.index(dest)
        deps = [m.event if isinstance(m, Message) else m for m in after]
        kind = sendq.FIXUP_BITS if fixup else sendq.CLASSICAL
        eid = self.machine._record(kind, (self.rank,), after=deps, bits=nbits, label=self.label)
        if fixup:
            self.machine.ledger.add(self.label, fixup=nbits)
        else:
            self.machine.ledger.add(self.label, bits=nbits)
        msg = Message(int(value), eid, nbits)
        self.machine._mailbox[(self.rank, dest, tag, comm)].append(msg)
        return msg

    def recv_bits(self, src: int, tag, comm: Communicator = None):
        comm = comm or self.world
        comm.index(src)
        msg = yield _RecvRequest(self.rank, src, tag, comm)
        return msg

    def establish_epr(self, requests: Sequence[tuple]):
        """Post several ``(slot, peer, tag, comm)`` EPR requests and wait for all of them."""
        entries = []
        for slot, peer, tag, comm in requests:
            if slot.rank != self.rank or slot.slot_class is not SlotClass.EPR_BUFFER:
                raise ProtocolError(f"{slot} is not an EPR-buffer slot of rank {self.rank}")
            if peer == self.rank:
                raise ProtocolError("cannot prepare an EPR pair with oneself")
            comm.index(peer)
            comm.index(self.rank)
            entries.append(EprEntry(slot, peer, tag, comm, self.label))
        if entries:
            yield _EprRequest(self.rank, entries)
