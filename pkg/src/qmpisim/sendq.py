"""SENDQ cost model: trace evaluation and closed-form delay/EPR estimates.

Times are exact rationals (:class:`fractions.Fraction`), so a trace-evaluated
delay can be compared to a closed form with ``==``.

Scheduling rules used by :func:`evaluate_trace`:

* an ``epr_establish`` event occupies the EPR port of both endpoints for ``E``
  (a node takes part in at most one EPR creation at a time) and holds one
  buffer slot at each endpoint until the event that consumes that half ends;
* rotations hold one of the node's rotation factories for ``D_R``;
* measurements cost ``D_M``, fixup gates ``D_F``, other local gates ``D_G``;
* classical traffic is free but counted.

Ready events are started in ascending id order whenever their resources are
free (greedy list scheduling).
"""

from __future__ import annotations

import heapq
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from graphlib import CycleError, TopologicalSorter
from typing import Iterable, Mapping, Optional, Sequence

from .errors import InfeasibleScheduleError, ModelError, TraceError

EPR = "epr_establish"
GATE = "local_gate"
MEASURE = "measurement"
CLASSICAL = "classical_bits"
FIXUP_BITS = "fixup_bits"
EVENT_KINDS = (EPR, GATE, MEASURE, CLASSICAL, FIXUP_BITS)

CHEM_METHODS = ("in_place", "out_of_place", "constant_depth")


def _time(value) -> Fraction:
    if isinstance(value, str):
        return Fraction(value)
    return Fraction(value)


@dataclass
class SendqParams:
    S: int = 2
    E: Fraction = Fraction(1)
    N: int = 2
    Q: int = 1
    D_R: Fraction = Fraction(1)
    D_M: Fraction = Fraction(0)
    D_F: Fraction = Fraction(0)
    D_G: Fraction = Fraction(0)
    rotation_factories_per_node: int = 1

    def __post_init__(self):
        for name in ("E", "D_R", "D_M", "D_F", "D_G"):
            value = _time(getattr(self, name))
            if value < 0:
                raise ModelError(f"{name} must be non-negative, got {value}")
            setattr(self, name, value)
        for name in ("S", "N", "Q"):
            if int(getattr(self, name)) < 0:
                raise ModelError(f"{name} must be non-negative")
        if self.D_R < self.D_G:
            raise ModelError("rotation delay D_R must be at least the generic gate delay D_G")
        if self.rotation_factories_per_node < 1:
            raise ModelError("need at least one rotation factory per node")

    def replace(self, **changes) -> "SendqParams":
        values = {k: getattr(self, k) for k in self.__dataclass_fields__}
        values.update(changes)
        return SendqParams(**values)

    def to_dict(self) -> dict:
        return {k: (str(v) if isinstance(v, Fraction) else v) for k, v in asdict(self).items()}


@dataclass
class Event:
    id: int
    kind: str
    ranks: tuple
    deps: tuple = ()
    gate: Optional[str] = None
    is_rotation: bool = False
    is_fixup: bool = False
    bits: int = 0
    label: Optional[str] = None
    # ranks whose EPR-buffer slot is freed when this event finishes
    releases: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ranks"] = list(self.ranks)
        d["deps"] = list(self.deps)
        return d


@dataclass
class EventTrace:
    events: list = field(default_factory=list)

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def since(self, start: int) -> "EventTrace":
        """Events with id >= start, renumbered from 0; earlier deps are dropped."""
        out = []
        for ev in self.events[start:]:
            deps = tuple(d - start for d in ev.deps if d >= start)
            out.append(
                Event(ev.id - start, ev.kind, ev.ranks, deps, ev.gate, ev.is_rotation,
                      ev.is_fixup, ev.bits, ev.label, list(ev.releases))
            )
        return EventTrace(out)

    def count(self, kind: str) -> int:
        return sum(1 for ev in self.events if ev.kind == kind)

    def epr_rounds(self) -> int:
        """Longest dependency chain counted in EPR events only."""
        depth = {}
        best = 0
        for ev in self.events:
            d = max((depth[p] for p in ev.deps if p in depth), default=0)
            if ev.kind == EPR:
                d += 1
            depth[ev.id] = d
            best = max(best, d)
        return best

    def to_list(self) -> list:
        return [ev.to_dict() for ev in self.events]

    @classmethod
    def from_list(cls, items: Iterable[Mapping]) -> "EventTrace":
        events = []
        for item in items:
            item = dict(item)
            item["ranks"] = tuple(item["ranks"])
            item["deps"] = tuple(item.get("deps", ()))
            item["releases"] = list(item.get("releases", ()))
            events.append(Event(**item))
        return cls(events)


@dataclass
class CostReport:
    epr_pairs: int
    classical_bits: int
    fixup_bits: int
    critical_path_delay: Fraction
    per_node_busy_time: dict
    epr_rounds: int = 0
    start_times: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {
            "epr_pairs": self.epr_pairs,
            "classical_bits": self.classical_bits,
            "fixup_bits": self.fixup_bits,
            "critical_path_delay": float(self.critical_path_delay),
            "critical_path_delay_exact": str(self.critical_path_delay),
            "epr_rounds": self.epr_rounds,
            "per_node_busy_time": {str(r): float(t) for r, t in sorted(self.per_node_busy_time.items())},
        }


def _validate(trace: EventTrace, params: SendqParams):
    ids = {}
    for pos, ev in enumerate(trace.events):
        if ev.kind not in EVENT_KINDS:
            raise TraceError(f"event {ev.id}: unknown kind {ev.kind!r}")
        if ev.id in ids:
            raise TraceError(f"duplicate event id {ev.id}")
        ids[ev.id] = pos
        for r in ev.ranks:
            if not 0 <= r < params.N:
                raise TraceError(f"event {ev.id}: rank {r} outside 0..{params.N - 1}")
        if ev.kind == EPR and (len(ev.ranks) != 2 or ev.ranks[0] == ev.ranks[1]):
            raise TraceError(f"event {ev.id}: EPR establishment needs two distinct ranks")
    graph = {}
    for ev in trace.events:
        for d in ev.deps:
            if d not in ids:
                raise TraceError(f"event {ev.id} depends on unknown event {d}")
        graph[ev.id] = set(ev.deps)
    try:
        tuple(TopologicalSorter(graph).static_order())
    except CycleError as exc:
        raise TraceError(f"trace has a dependency cycle: {exc.args[1]}") from exc


def _duration(ev: Event, p: SendqParams) -> Fraction:
    if ev.kind == EPR:
        return p.E
    if ev.kind == MEASURE:
        return p.D_M
    if ev.kind == GATE:
        if ev.is_fixup:
            return p.D_F
        return p.D_R if ev.is_rotation else p.D_G
    return Fraction(0)


def evaluate_trace(trace: EventTrace, params: SendqParams) -> CostReport:
    _validate(trace, params)
    events = {ev.id: ev for ev in trace.events}
    waiting = {ev.id: len(set(ev.deps)) for ev in trace.events}
    children = defaultdict(list)
    for ev in trace.events:
        for d in set(ev.deps):
            children[d].append(ev.id)

    port_busy = defaultdict(bool)
    slots_used = defaultdict(int)
    factories_used = defaultdict(int)
    busy = defaultdict(Fraction)
    start_times = {}
    ready = sorted(eid for eid, n in waiting.items() if n == 0)
    running = []  # heap of (finish, id)
    t = Fraction(0)
    makespan = Fraction(0)
    done = 0

    def can_start(ev):
        if ev.kind == EPR:
            return all(not port_busy[r] and slots_used[r] < params.S for r in ev.ranks)
        if ev.kind == GATE and ev.is_rotation and not ev.is_fixup:
            return factories_used[ev.ranks[0]] < params.rotation_factories_per_node
        return True

    def start(ev):
        if ev.kind == EPR:
            for r in ev.ranks:
                port_busy[r] = True
                slots_used[r] += 1
        elif ev.kind == GATE and ev.is_rotation and not ev.is_fixup:
            factories_used[ev.ranks[0]] += 1
        dur = _duration(ev, params)
        start_times[ev.id] = t
        for r in ev.ranks:
            busy[r] += dur
        heapq.heappush(running, (t + dur, ev.id))

    def finish(eid):
        ev = events[eid]
        if ev.kind == EPR:
            for r in ev.ranks:
                port_busy[r] = False
        elif ev.kind == GATE and ev.is_rotation and not ev.is_fixup:
            factories_used[ev.ranks[0]] -= 1
        for r in ev.releases:
            slots_used[r] -= 1
        for c in children[eid]:
            waiting[c] -= 1
            if waiting[c] == 0:
                ready.append(c)

    while done < len(events):
        progressed = True
        while progressed:
            progressed = False
            ready.sort()
            still = []
            for eid in ready:
                ev = events[eid]
                if can_start(ev):
                    start(ev)
                    progressed = True
                else:
                    still.append(eid)
            ready[:] = still
            while running and running[0][0] == t:
                _, eid = heapq.heappop(running)
                finish(eid)
                done += 1
                progressed = True
        if done == len(events):
            break
        if not running:
            stuck = sorted(
                {r for eid in ready for r in events[eid].ranks if events[eid].kind == EPR}
            )
            raise InfeasibleScheduleError(
                f"schedule stalls with S={params.S}: EPR establishment blocked at node(s) {stuck}"
            )
        t = running[0][0]
        makespan = max(makespan, t)
        while running and running[0][0] == t:
            _, eid = heapq.heappop(running)
            finish(eid)
            done += 1

    return CostReport(
        epr_pairs=trace.count(EPR),
        classical_bits=sum(ev.bits for ev in trace.events if ev.kind == CLASSICAL),
        fixup_bits=sum(ev.bits for ev in trace.events if ev.kind == FIXUP_BITS),
        critical_path_delay=makespan,
        per_node_busy_time=dict(busy),
        epr_rounds=trace.epr_rounds(),
        start_times=start_times,
    )


def rotation_busy_time(trace: EventTrace, params: SendqParams) -> dict:
    """Per-node time spent in rotation gates, spread over the node's factories."""
    counts = defaultdict(int)
    for ev in trace.events:
        if ev.kind == GATE and ev.is_rotation and not ev.is_fixup:
            counts[ev.ranks[0]] += 1
    return {r: n * params.D_R / params.rotation_factories_per_node
            for r, n in sorted(counts.items())}


def ceil_log2(n: int) -> int:
    if n < 1:
        raise ModelError(f"need n >= 1, got {n}")
    return (n - 1).bit_length()


def analytic_bcast_tree_delay(N: int, params: SendqParams) -> Fraction:
    """E * ceil(log2 N): the doubling broadcast built from Send/Recv."""
    return params.E * ceil_log2(N)


def analytic_bcast_cat_delay(params: SendqParams) -> Fraction:
    """2E + D_M + D_F for the constant-depth cat-state broadcast (0 when N=1).

    A two-node run of :func:`qmpi.bcast_cat` needs a single EPR pair and so
    finishes in E + D_M + D_F, below this bound.
    """
    if params.N <= 1:
        return Fraction(0)
    return 2 * params.E + params.D_M + params.D_F


@dataclass(frozen=True)
class TfimDelays:
    d_trotter: Fraction
    per_step_delay: Fraction


def analytic_tfim_delays(n: int, N: int, S: int, params: SendqParams) -> TfimDelays:
    if N < 1 or n % N:
        raise ModelError(f"{n} spins are not divisible across {N} nodes")
    d_trotter = 2 * Fraction(n, N) * params.D_R
    if N == 1:
        return TfimDelays(d_trotter, d_trotter)
    if S < 1:
        raise ModelError("S=0 leaves no room for EPR halves")
    if S == 1:
        per_step = max(d_trotter, 2 * params.E + 2 * params.D_R)
    else:
        per_step = max(d_trotter, 2 * params.E)
    return TfimDelays(d_trotter, per_step)


def tfim_node_count_bound(n: int, D_R, E) -> int:
    """Largest N with n * D_R / E >= N; 0 means communication-bound for all N."""
    E = _time(E)
    if E <= 0:
        raise ModelError(f"E must be positive, got {E}")
    return math.floor(n * _time(D_R) / E)


@dataclass(frozen=True)
class ChemEstimate:
    delay: Fraction
    epr: int
    min_epr_slots: int


def analytic_chem_delay(method: str, k: int, params: SendqParams) -> ChemEstimate:
    """Delay, EPR count and minimum S for a k-qubit Z...Z term, one qubit per node.

    The auxiliary variants keep their auxiliary on an extra node.
    """
    if k < 1:
        raise ModelError(f"term must act on at least one qubit, got k={k}")
    E, D_R = params.E, params.D_R
    if method == "in_place":
        return ChemEstimate(2 * E * ceil_log2(k) + D_R, 2 * (k - 1), 1)
    if method == "out_of_place":
        return ChemEstimate(E * k + D_R, k, 1)
    if method == "constant_depth":
        # the cat spans k+1 nodes; with k=1 it is a single pair
        return ChemEstimate((2 if k > 1 else 1) * E + D_R, k, 2 if k > 1 else 1)
    raise ModelError(f"unknown method {method!r}; expected one of {CHEM_METHODS}")


def epr_for_span(method: str, ranks_spanned: int) -> int:
    if method not in CHEM_METHODS:
        raise ModelError(f"unknown method {method!r}; expected one of {CHEM_METHODS}")
    if ranks_spanned <= 1:
        return 0
    return analytic_chem_delay(method, ranks_spanned, SendqParams()).epr


def count_epr_for_terms(
    terms: Sequence[Iterable[int]], layout: Mapping[int, int], method: str
) -> int:
    """EPR pairs for one Trotter step over multi-Z terms under a qubit->rank layout.

    Qubits sharing a rank are combined locally first, so a term spanning k'
    ranks costs the method's EPR count for k'. Terms on a single rank are free.
    """
    total = 0
    for term in terms:
        ranks = set()
        for q in term:
            if q not in layout:
                raise ModelError(f"qubit {q} has no rank in the layout")
            ranks.add(layout[q])
        total += epr_for_span(method, len(ranks))
    return total
