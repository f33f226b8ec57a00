"""Transverse-field Ising model on a ring, distributed across nodes.

Each node holds a contiguous block of spins plus one scratch qubit.  Edges
inside a block are handled with CNOT / Rz / CNOT; the edge between the last
spin of rank ``r`` and the first spin of rank ``r+1`` is handled on rank
``r`` using an entangled copy of the neighbour's first spin, exchanged in an
odd/even phase pattern so the blocking calls pair up.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .. import qmpi
from ..errors import CapacityError, ConfigError
from ..machine import Machine, RankProgram, RunResult
from ..sendq import SendqParams, TfimDelays, analytic_tfim_delays
from ..statevec import Rx, Rz

ORACLE_MAX_SPINS = 12


@dataclass(frozen=True)
class TfimSpec:
    n_spins: int
    J: float = 1.0
    Gamma: float = 1.0
    t: float = 1.0
    trotter_steps: int = 1
    annealing_steps: int = 0
    layout: Optional[int] = None  # spins per node; defaults to n_spins / N
    initial: str = "zero"  # "zero", "plus" or a bitstring, spin 0 first

    def __post_init__(self):
        if self.n_spins < 2:
            raise ConfigError(f"need at least 2 spins, got {self.n_spins}")
        if self.trotter_steps < 1:
            raise ConfigError(f"need at least one Trotter step, got {self.trotter_steps}")
        if self.annealing_steps < 0:
            raise ConfigError("annealing_steps must be >= 0")
        for name in ("J", "Gamma", "t"):
            if not np.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")
        if self.initial not in ("zero", "plus"):
            if len(self.initial) != self.n_spins or set(self.initial) - {"0", "1"}:
                raise ConfigError(
                    f"initial must be 'zero', 'plus' or a {self.n_spins}-bit string"
                )

    def spins_per_node(self, num_nodes: int) -> int:
        if num_nodes < 1 or self.n_spins % num_nodes:
            raise ConfigError(
                f"{self.n_spins} spins are not divisible across {num_nodes} nodes"
            )
        m = self.n_spins // num_nodes
        if self.layout is not None and self.layout != m:
            raise ConfigError(f"layout of {self.layout} spins per node does not match n/N = {m}")
        return m

    def schedule(self):
        """(J, Gamma) for every evolution segment, each of duration ``t``."""
        if self.annealing_steps == 0:
            return [(self.J, self.Gamma)]
        A = self.annealing_steps
        return [(a / A, 1.0 - a / A) for a in range(A)]

    @property
    def dt(self) -> float:
        return self.t / self.trotter_steps

    def edges(self):
        # the ring-closing edge is listed even for n=2, where it repeats (0, 1)
        return [(i, i + 1) for i in range(self.n_spins - 1)] + [(self.n_spins - 1, 0)]


@dataclass
class TfimResult:
    state: np.ndarray
    run: RunResult
    spins_per_node: int
    num_nodes: int

    @property
    def ledger(self):
        return self.run.ledger

    @property
    def trace(self):
        return self.run.trace

    def cost(self, params: SendqParams):
        return self.run.cost(params)

    def analytic(self, params: SendqParams) -> TfimDelays:
        N = self.num_nodes
        return analytic_tfim_delays(self.spins_per_node * N, N, params.S, params)


def _initial_gates(spec: TfimSpec, index: int):
    if spec.initial == "plus":
        return ["H"]
    if spec.initial == "zero":
        return []
    return ["X"] if spec.initial[index] == "1" else []


def tfim_evolve(machine: Machine, spec: TfimSpec) -> TfimResult:
    """Run the Trotterized evolution (or annealing sweep) on every node of ``machine``."""
    N = machine.num_nodes
    m = spec.spins_per_node(N)
    need = m + (1 if N > 1 else 0)
    if machine.config.compute_qubits_per_node < need:
        raise ConfigError(f"TFIM with {m} spins per node needs Q >= {need}")
    spins = {r: machine.alloc_local(r, m) for r in range(N)}

    def prepare(ctx):
        for j, q in enumerate(spins[ctx.rank]):
            for g in _initial_gates(spec, ctx.rank * m + j):
                if g == "H":
                    ctx.h(q)
                else:
                    ctx.x(q)

    machine.run_programs([RankProgram(r, prepare) for r in range(N)])

    def program(ctx):
        qs = spins[ctx.rank]
        rank, size = ctx.rank, N
        left, right = (rank - 1) % size, (rank + 1) % size
        step_no = 0
        for J, gamma in spec.schedule():
            for _ in range(spec.trotter_steps):
                zz = 2.0 * J * spec.dt
                for site in range(m - 1):
                    ctx.cnot(qs[site], qs[site + 1])
                    ctx.apply(Rz(zz), qs[site + 1])
                    ctx.cnot(qs[site], qs[site + 1])
                if size == 1:
                    ctx.cnot(qs[m - 1], qs[0])
                    ctx.apply(Rz(zz), qs[0])
                    ctx.cnot(qs[m - 1], qs[0])
                else:
                    for odd in (0, 1):
                        if (rank & 1) == odd:
                            yield from qmpi.send(ctx, qs[0], left, step_no)
                            yield from qmpi.unsend(ctx, qs[0], left, step_no)
                        else:
                            tmp = ctx.alloc(1)[0]
                            yield from qmpi.recv(ctx, tmp, right, step_no)
                            ctx.cnot(qs[m - 1], tmp)
                            ctx.apply(Rz(zz), tmp)
                            ctx.cnot(qs[m - 1], tmp)
                            yield from qmpi.unrecv(ctx, tmp, right, step_no)
                for q in qs:
                    ctx.apply(Rx(-2.0 * gamma * spec.dt), q)
                step_no += 1

    run = machine.run_programs([RankProgram(r, program) for r in range(N)])
    order = [q for r in range(N) for q in spins[r]]
    return TfimResult(machine.get_state(order), run, m, N)


def tfim_oracle(spec: TfimSpec) -> np.ndarray:
    """Same Trotter product as :func:`tfim_evolve`, applied densely on one register."""
    n = spec.n_spins
    if n > ORACLE_MAX_SPINS:
        raise CapacityError(f"oracle limited to {ORACLE_MAX_SPINS} spins, got {n}")
    dim = 1 << n
    idx = np.arange(dim)
    z = 1 - 2 * ((idx[:, None] >> np.arange(n)) & 1)  # z[i, k] = <Z_k> on basis state i
    zz_sum = sum(z[:, a] * z[:, b] for a, b in spec.edges())

    psi = np.zeros(dim, dtype=complex)
    if spec.initial == "plus":
        psi[:] = 1 / np.sqrt(dim)
    elif spec.initial == "zero":
        psi[0] = 1.0
    else:
        psi[int(spec.initial[::-1], 2)] = 1.0

    dt = spec.dt
    for J, gamma in spec.schedule():
        zz_phase = np.exp(-1j * J * dt * zz_sum)
        c, s = np.cos(gamma * dt), np.sin(gamma * dt)
        rx = np.array([[c, 1j * s], [1j * s, c]])  # Rx(-2 gamma dt)
        for _ in range(spec.trotter_steps):
            psi = psi * zz_phase
            t = psi.reshape([2] * n)
            for k in range(n):
                t = np.moveaxis(np.tensordot(rx, t, axes=([1], [n - 1 - k])), 0, n - 1 - k)
            psi = t.reshape(-1)
    return psi
