"""Broadcast comparison and the two-node EPR demo."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Iterable

from .. import qmpi
from ..errors import ConfigError
from ..machine import Communicator, Machine, RankProgram
from ..sendq import SendqParams, evaluate_trace
from ..statevec import fidelity, random_state


@dataclass
class BenchRow:
    N: int
    delay_tree: Fraction
    delay_cat: Fraction
    epr_tree: int
    epr_cat: int
    epr_rounds_tree: int
    epr_rounds_cat: int
    fidelity: float

    @property
    def epr(self) -> int:
        return self.epr_tree

    def to_dict(self) -> dict:
        d = asdict(self)
        d["delay_tree"] = str(self.delay_tree)
        d["delay_cat"] = str(self.delay_cat)
        d["epr"] = self.epr
        return d


def _run_bcast(machine, comm, variant, psi):
    root = comm.ranks[0]
    qubits = {r: machine.alloc_local(r, 1)[0] for r in comm.ranks}
    machine.set_state([qubits[root]], psi)
    fanout = qmpi.bcast_tree if variant == "tree" else qmpi.bcast_cat

    def program(ctx):
        yield from fanout(ctx, qubits[ctx.rank], root, comm)

    run = machine.run_programs([RankProgram(r, program) for r in comm.ranks])
    state = machine.get_state([qubits[r] for r in comm.ranks])

    def undo(ctx):
        yield from qmpi.unbcast(ctx, qubits[ctx.rank], root, comm)

    machine.run_programs([RankProgram(r, undo) for r in comm.ranks])
    restored = machine.get_state([qubits[root]])
    if fidelity(restored, psi) < 1 - 1e-10:
        raise AssertionError(f"unbcast ({variant}) did not restore the root state")
    # the root's qubit was supplied by us; reset it before release
    machine.set_state([qubits[root]], [1.0, 0.0])
    machine.free([qubits[root]])
    return state, run


def bcast_bench(machine: Machine, N_list: Iterable[int], params: SendqParams) -> list:
    """Run both broadcasts over the first N ranks for each N and compare them."""
    rows = []
    for N in N_list:
        if not 1 <= N <= machine.num_nodes:
            raise ConfigError(f"N={N} outside 1..{machine.num_nodes}")
        comm = Communicator(tuple(range(N)))
        psi = random_state(1, machine.rng)
        tree_state, tree = _run_bcast(machine, comm, "tree", psi)
        cat_state, cat = _run_bcast(machine, comm, "cat", psi)
        p = params.replace(N=N)
        rows.append(BenchRow(
            N=N,
            delay_tree=evaluate_trace(tree.trace, p).critical_path_delay,
            delay_cat=evaluate_trace(cat.trace, p).critical_path_delay,
            epr_tree=tree.ledger.epr_pairs_consumed,
            epr_cat=cat.ledger.epr_pairs_consumed,
            epr_rounds_tree=tree.trace.epr_rounds(),
            epr_rounds_cat=cat.trace.epr_rounds(),
            fidelity=fidelity(tree_state, cat_state),
        ))
    return rows


def epr_demo(machine: Machine) -> tuple:
    """Share one EPR pair between ranks 0 and 1 and measure both halves."""
    if machine.num_nodes < 2:
        raise ConfigError("the EPR demo needs at least two nodes")

    def program(ctx):
        peer = 1 - ctx.rank
        half = ctx.acquire_epr_slot()
        yield from qmpi.prepare_epr(ctx, half, peer, 0)
        bit = ctx.measure(half)
        # collapsed to a basis state; flip back to |0> so it can be released
        if bit:
            ctx.x(half)
        ctx.free(half)
        return bit

    run = machine.run_programs([RankProgram(r, program) for r in (0, 1)])
    return run.returns[0], run.returns[1]

