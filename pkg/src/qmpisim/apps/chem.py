"""exp(-i t Z...Z) on qubits spread over several nodes, three ways.

Qubits that share a node are first folded into one representative with
local CNOTs, so only one qubit per node takes part in communication.

* ``in_place``: parity accumulates into the first representative along a
  binary tree of distributed CNOTs, is rotated, and the tree is replayed.
* ``out_of_place``: each representative is copied in turn onto the
  auxiliary node and XORed into a fresh auxiliary qubit.
* ``constant_depth``: in the Hadamard basis the parity becomes a fanout of
  the auxiliary qubit, which a cat-state broadcast does in one EPR round.

Both auxiliary variants undo the parity with an X measurement of the
auxiliary and Z fixups on the representatives, which needs no EPR pairs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .. import qmpi
from ..errors import ConfigError
from ..machine import Communicator, Machine, RankProgram, RunResult
from ..sendq import CHEM_METHODS, ChemEstimate, SendqParams, analytic_chem_delay
from ..statevec import Rz, Z

NEEDS_AUX = ("out_of_place", "constant_depth")


@dataclass(frozen=True)
class ChemTermSpec:
    qubits: tuple
    t: float
    method: str = "in_place"

    def __post_init__(self):
        object.__setattr__(self, "qubits", tuple(int(q) for q in self.qubits))
        if not self.qubits:
            raise ConfigError("a term needs at least one qubit")
        if len(set(self.qubits)) != len(self.qubits):
            raise ConfigError(f"repeated qubit index in {self.qubits}")
        if self.method not in CHEM_METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {CHEM_METHODS}")
        if not np.isfinite(self.t):
            raise ConfigError("t must be finite")

    @property
    def k(self) -> int:
        return len(self.qubits)


@dataclass
class ChemResult:
    state: np.ndarray  # amplitudes over spec.qubits, first index is bit 0
    run: RunResult
    ranks: list  # ranks holding term qubits, in representative order
    aux_rank: Optional[int]

    @property
    def ledger(self):
        return self.run.ledger

    @property
    def trace(self):
        return self.run.trace

    def cost(self, params: SendqParams):
        return self.run.cost(params)

    def analytic(self, method: str, params: SendqParams) -> ChemEstimate:
        return analytic_chem_delay(method, len(self.ranks), params)


def block_layout(qubits: Sequence[int], num_ranks: int) -> dict:
    """Contiguous blocks of the (sorted) qubit indices over ranks 0..num_ranks-1."""
    if num_ranks < 1:
        raise ConfigError("need at least one rank for the layout")
    ordered = sorted(qubits)
    k = len(ordered)
    per = -(-k // num_ranks)
    return {q: i // per for i, q in enumerate(ordered)}


def _default_layout(spec: ChemTermSpec, N: int) -> dict:
    avail = N - 1 if spec.method in NEEDS_AUX and N > 1 else N
    return block_layout(spec.qubits, min(avail, spec.k))


def chem_term(
    machine: Machine,
    spec: ChemTermSpec,
    layout: Optional[Mapping[int, int]] = None,
    aux_rank: Optional[int] = None,
    initial=None,
) -> ChemResult:
    """Apply exp(-i t Z_{q1}...Z_{qk}) with the chosen circuit.

    ``initial`` holds amplitudes over ``spec.qubits`` (bit i is the i-th
    listed qubit); the default is |0...0>.  The auxiliary lives on
    ``aux_rank``, by default the last rank when it holds no term qubit.
    """
    N = machine.num_nodes
    layout = dict(layout) if layout is not None else _default_layout(spec, N)
    for q in spec.qubits:
        if q not in layout:
            raise ConfigError(f"qubit {q} has no rank in the layout")
        if not 0 <= layout[q] < N:
            raise ConfigError(f"qubit {q} mapped to rank {layout[q]} outside 0..{N - 1}")

    groups: dict = {}
    for q in spec.qubits:
        groups.setdefault(layout[q], []).append(q)
    ranks = list(groups)
    if spec.method in NEEDS_AUX:
        if aux_rank is None:
            aux_rank = N - 1 if N - 1 not in groups else ranks[0]
        if not 0 <= aux_rank < N:
            raise ConfigError(f"aux rank {aux_rank} outside 0..{N - 1}")
    else:
        aux_rank = None

    refs = {}
    for r, qs in groups.items():
        for q, ref in zip(qs, machine.alloc_local(r, len(qs))):
            refs[q] = ref
    term_refs = [refs[q] for q in spec.qubits]
    if initial is not None:
        machine.set_state(term_refs, initial)
    aux = machine.alloc_local(aux_rank, 1)[0] if aux_rank is not None else None
    reps = {r: refs[qs[0]] for r, qs in groups.items()}
    theta = 2.0 * spec.t

    def fold(ctx, undo=False):
        qs = groups.get(ctx.rank, [])
        pairs = [(refs[q], refs[qs[0]]) for q in qs[1:]]
        for c, tgt in (reversed(pairs) if undo else pairs):
            ctx.cnot(c, tgt)

    def in_place(ctx):
        k = len(ranks)
        pos = ranks.index(ctx.rank) if ctx.rank in ranks else None
        levels = []
        step = 1
        while step < k:
            levels.append(step)
            step *= 2

        def dist_cnot(step, tag):
            # control is the rep at pos+step, target the rep at pos
            if pos % (2 * step) == 0 and pos + step < k:
                src = ranks[pos + step]
                copy = ctx.alloc(1)[0]
                yield from qmpi.recv(ctx, copy, src, tag)
                ctx.cnot(copy, reps[ctx.rank])
                yield from qmpi.unrecv(ctx, copy, src, tag)
            elif pos % (2 * step) == step:
                dest = ranks[pos - step]
                yield from qmpi.send(ctx, reps[ctx.rank], dest, tag)
                yield from qmpi.unsend(ctx, reps[ctx.rank], dest, tag)

        if pos is None:
            return
        fold(ctx)
        for i, step in enumerate(levels):
            yield from dist_cnot(step, i)
        if pos == 0:
            ctx.apply(Rz(theta), reps[ctx.rank])
        for i, step in reversed(list(enumerate(levels))):
            yield from dist_cnot(step, len(levels) + i)
        fold(ctx, undo=True)

    def measure_out(ctx, tag):
        # X-measure the auxiliary; outcome 1 means a Z on every representative
        ctx.h(aux)
        bit = ctx.measure_and_free(aux)
        event = ctx.last_event
        for r in ranks:
            if r == aux_rank:
                ctx.fixup(Z, reps[r], bit, after=[event])
            else:
                ctx.send_bits(r, bit, tag, after=[event])

    def apply_measured_fixup(ctx, tag):
        if ctx.rank != aux_rank and ctx.rank in groups:
            msg = yield from ctx.recv_bits(aux_rank, tag)
            ctx.fixup(Z, reps[ctx.rank], msg.value, after=[msg])

    def out_of_place(ctx):
        fold(ctx)
        if ctx.rank == aux_rank:
            for i, r in enumerate(ranks):
                if r == aux_rank:
                    ctx.cnot(reps[r], aux)
                    continue
                copy = ctx.alloc(1)[0]
                yield from qmpi.recv(ctx, copy, r, i)
                ctx.cnot(copy, aux)
                yield from qmpi.unrecv(ctx, copy, r, i)
            ctx.apply(Rz(theta), aux)
            measure_out(ctx, "parity")
        elif ctx.rank in groups:
            i = ranks.index(ctx.rank)
            yield from qmpi.send(ctx, reps[ctx.rank], aux_rank, i)
            yield from qmpi.unsend(ctx, reps[ctx.rank], aux_rank, i)
        yield from apply_measured_fixup(ctx, "parity")
        fold(ctx, undo=True)

    members = [aux_rank] + [r for r in ranks if r != aux_rank] if aux_rank is not None else []
    comm = Communicator(tuple(members)) if members else None

    def constant_depth(ctx):
        if ctx.rank not in members:
            return
        fold(ctx)
        if ctx.rank in groups:
            ctx.h(reps[ctx.rank])
        if ctx.rank == aux_rank:
            ctx.h(aux)
            control = aux
        else:
            control = ctx.alloc(1)[0]
        yield from qmpi.bcast_cat(ctx, control, aux_rank, comm)
        if ctx.rank in groups:
            ctx.cnot(control, reps[ctx.rank])
        yield from qmpi.unbcast(ctx, control, aux_rank, comm)
        if ctx.rank in groups:
            ctx.h(reps[ctx.rank])
        if ctx.rank == aux_rank:
            ctx.h(aux)
            ctx.apply(Rz(theta), aux)
            measure_out(ctx, "parity")
        yield from apply_measured_fixup(ctx, "parity")
        fold(ctx, undo=True)

    body = {"in_place": in_place, "out_of_place": out_of_place,
            "constant_depth": constant_depth}[spec.method]
    run = machine.run_programs([RankProgram(r, body) for r in range(N)])
    state = machine.get_state(term_refs)
    return ChemResult(state, run, ranks, aux_rank)
