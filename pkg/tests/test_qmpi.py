import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qmpisim import qmpi
from qmpisim.errors import AllocationError, EprBufferError, ProtocolError
from qmpisim.machine import Machine, MachineConfig
from qmpisim.statevec import fidelity, random_state

from conftest import one_qubit_per_rank, run_all

SQ2 = 1 / np.sqrt(2)


def copy_pair(state, seed=0):
    m = Machine(MachineConfig(2, 1, 1, seed=seed))
    src, dst = m.alloc_local(0)[0], m.alloc_local(1)[0]
    m.set_state([src], state)

    def body(ctx):
        if ctx.rank == 0:
            yield from qmpi.send(ctx, src, 1, 0)
        else:
            yield from qmpi.recv(ctx, dst, 0, 0)

    return m, src, dst, run_all(m, body)


@pytest.mark.parametrize("seed", range(5))
def test_copy_of_one_is_one(seed):
    m, src, dst, _ = copy_pair([0, 1], seed)
    assert np.allclose(m.get_state([src, dst]), [0, 0, 0, 1])


def test_copy_of_plus_is_bell_pair():
    m, src, dst, result = copy_pair([SQ2, SQ2])
    assert np.allclose(m.get_state([src, dst]), [SQ2, 0, 0, SQ2])
    assert result.ledger.totals == (1, 1)
    assert result.ledger.breakdown["copy"] == [1, 1, 0]


@given(seed=st.integers(0, 10**6))
def test_send_unsend_restores(seed):
    rng = np.random.default_rng(seed)
    psi = random_state(1, rng)
    m, src, dst, _ = copy_pair(psi, seed)

    def body(ctx):
        if ctx.rank == 0:
            yield from qmpi.unsend(ctx, src, 1, 0)
        else:
            yield from qmpi.unrecv(ctx, dst, 0, 0)

    result = run_all(m, body)
    assert result.ledger.totals == (0, 1)
    assert fidelity(m.get_state([src]), psi) >= 1 - 1e-10
    assert dst not in m.live_qubits


def test_unsend_without_copy():
    m = Machine(MachineConfig(2, 1, 1))
    q = m.alloc_local(0)[0]
    with pytest.raises(ProtocolError):
        run_all(m, lambda ctx: qmpi.unsend(ctx, q, 1, 0), ranks=[0])


def teleport(state_refs_setup, seed):
    m = Machine(MachineConfig(2, 2, 1, seed=seed))
    src, partner = m.alloc_local(0, 2)
    dst = m.alloc_local(1)[0]
    state_refs_setup(m, src, partner)

    def body(ctx):
        if ctx.rank == 0:
            yield from qmpi.send_move(ctx, src, 1, 0)
        else:
            yield from qmpi.recv_move(ctx, dst, 0, 0)

    return m, src, partner, dst, run_all(m, body)


@pytest.mark.parametrize("seed", range(8))
def test_teleport_fixed_state(seed):
    m, src, _, dst, result = teleport(lambda m, s, p: m.set_state([s], [0.6, 0.8]), seed)
    assert fidelity(m.get_state([dst]), [0.6, 0.8]) >= 1 - 1e-12
    assert src not in m.live_qubits
    assert result.ledger.totals == (1, 2)


@given(seed=st.integers(0, 10**6))
def test_teleport_keeps_entanglement(seed):
    psi = random_state(2, np.random.default_rng(seed))
    m, _, partner, dst, _ = teleport(lambda m, s, p: m.set_state([s, p], psi), seed)
    assert fidelity(m.get_state([dst, partner]), psi) >= 1 - 1e-10


def test_unmove_round_trip():
    psi = random_state(1, np.random.default_rng(4))
    m = Machine(MachineConfig(2, 1, 1, seed=9))
    src, dst = m.alloc_local(0)[0], m.alloc_local(1)[0]
    m.set_state([src], psi)

    def forth(ctx):
        if ctx.rank == 0:
            yield from qmpi.send_move(ctx, src, 1, 0)
        else:
            yield from qmpi.recv_move(ctx, dst, 0, 0)

    run_all(m, forth)
    back = {}

    def undo(ctx):
        if ctx.rank == 0:
            back[0] = m.alloc_local(0)[0]
            yield from qmpi.unsend_move(ctx, back[0], 1, 0)
        else:
            yield from qmpi.unrecv_move(ctx, dst, 0, 0)

    result = run_all(m, undo)
    assert result.ledger.totals == (1, 2)
    assert result.ledger.breakdown["unmove"][:2] == [1, 2]
    assert fidelity(m.get_state([back[0]]), psi) >= 1 - 1e-10


def bcast(N, variant, psi, S=2, seed=0):
    m, qs = one_qubit_per_rank(N, S=S, seed=seed)
    m.set_state([qs[0]], psi)
    fn = qmpi.bcast_tree if variant == "tree" else qmpi.bcast_cat
    result = run_all(m, lambda ctx: fn(ctx, qs[ctx.rank], 0))
    return m, qs, result


def cat_of(psi, N):
    out = np.zeros(1 << N, dtype=complex)
    out[0], out[-1] = psi[0], psi[1]
    return out


@pytest.mark.parametrize("variant", ["tree", "cat"])
@pytest.mark.parametrize("N", [1, 2, 3, 4, 5, 6])
def test_bcast_makes_cat_state(variant, N):
    psi = random_state(1, np.random.default_rng(N))
    m, qs, result = bcast(N, variant, psi, seed=N)
    assert fidelity(m.get_state(qs), cat_of(psi, N)) >= 1 - 1e-10
    assert result.ledger.totals == (N - 1, N - 1)


def test_bcast_tree_rounds_n8():
    _, _, result = bcast(8, "tree", [SQ2, SQ2])
    assert result.trace.epr_rounds() == 3


@pytest.mark.parametrize("N", [2, 3, 5, 8])
def test_bcast_cat_one_round_and_fixup_bits(N):
    _, _, result = bcast(N, "cat", [SQ2, SQ2])
    assert result.trace.epr_rounds() == 1
    assert result.ledger.fixup_bits == max(N - 2, 0)


def test_bcast_cat_n3_example():
    m, qs, _ = bcast(3, "cat", [0.6, 0.8])
    expected = np.zeros(8)
    expected[0], expected[7] = 0.6, 0.8
    assert np.allclose(m.get_state(qs), expected)


def test_bcast_cat_needs_two_slots():
    with pytest.raises(EprBufferError):
        bcast(4, "cat", [SQ2, SQ2], S=1)


@pytest.mark.parametrize("seed", range(4))
def test_tree_and_cat_agree(seed):
    psi = random_state(1, np.random.default_rng(seed))
    a, qa, _ = bcast(5, "tree", psi, seed=seed)
    b, qb, _ = bcast(5, "cat", psi, seed=seed + 100)
    assert fidelity(a.get_state(qa), b.get_state(qb)) >= 1 - 1e-10


@pytest.mark.parametrize("variant", ["tree", "cat"])
@pytest.mark.parametrize("N", [2, 3, 4])
def test_unbcast_restores(variant, N):
    rng = np.random.default_rng(N)
    psi = random_state(2, rng)
    m = Machine(MachineConfig(N, 2, 2, seed=N))
    qs = [m.alloc_local(r)[0] for r in range(N)]
    spectator = m.alloc_local(0)[0]
    m.set_state([qs[0], spectator], psi)
    fn = qmpi.bcast_tree if variant == "tree" else qmpi.bcast_cat
    run_all(m, lambda ctx: fn(ctx, qs[ctx.rank], 0))
    result = run_all(m, lambda ctx: qmpi.unbcast(ctx, qs[ctx.rank], 0))
    assert result.ledger.totals == (0, N - 1)
    assert fidelity(m.get_state([qs[0], spectator]), psi) >= 1 - 1e-10


def test_unbcast_without_bcast():
    m, qs = one_qubit_per_rank(2)
    with pytest.raises(ProtocolError):
        run_all(m, lambda ctx: qmpi.unbcast(ctx, qs[ctx.rank], 0))


def test_bcast_n1_is_noop():
    _, _, result = bcast(1, "tree", [SQ2, SQ2])
    assert result.ledger.totals == (0, 0)


def reduce_setup(bits, root=0, seed=0):
    N = len(bits)
    m = Machine(MachineConfig(N, 2, 2, seed=seed))
    cs = [m.alloc_local(r)[0] for r in range(N)]
    target = m.alloc_local(root)[0]
    for r, b in enumerate(bits):
        if b:
            run_all(m, lambda ctx, q=cs[r]: ctx.x(q), ranks=[r])
    return m, cs, target


@pytest.mark.parametrize("N", range(1, 6))
def test_reduce_all_basis_inputs(N):
    for root in range(N):
        for bits in itertools.product([0, 1], repeat=N):
            m, cs, target = reduce_setup(bits, root)
            run_all(m, lambda ctx: qmpi.reduce_parity(ctx, cs[ctx.rank], target, root))
            p1 = m.state.probability_one(m._pos[target]) if target in m._pos else 0.0
            assert p1 == pytest.approx(sum(bits) % 2, abs=1e-9)
            run_all(m, lambda ctx: qmpi.unreduce_parity(ctx, cs[ctx.rank], target, root))
            assert m.is_zero(target)


def test_reduce_example_and_ledger():
    m, cs, target = reduce_setup([1, 1, 0, 1])
    fwd = run_all(m, lambda ctx: qmpi.reduce_parity(ctx, cs[ctx.rank], target, 0))
    assert m.state.probability_one(m._pos[target]) == pytest.approx(1)
    assert fwd.ledger.totals == (3, 3)
    inv = run_all(m, lambda ctx: qmpi.unreduce_parity(ctx, cs[ctx.rank], target, 0))
    assert inv.ledger.totals == (0, 3)


def test_reduce_superposition_example():
    m = Machine(MachineConfig(2, 2, 2))
    c0, c1 = m.alloc_local(0)[0], m.alloc_local(1)[0]
    target = m.alloc_local(0)[0]
    m.set_state([c0, c1], [0, 0, SQ2, SQ2])  # c0 in |+>, c1 = |1>
    run_all(m, lambda ctx: qmpi.reduce_parity(ctx, [c0, c1][ctx.rank], target, 0))
    scratch = [q for q in m.live_qubits if q.rank == 1 and q != c1]
    state = m.get_state([c0, c1, target] + scratch)
    probs = (np.abs(state) ** 2).reshape(-1, 8).sum(axis=0)
    expected = np.zeros(8)
    expected[0b110] = expected[0b011] = 0.5
    assert np.allclose(probs, expected)
    run_all(m, lambda ctx: qmpi.unreduce_parity(ctx, [c0, c1][ctx.rank], target, 0))
    assert np.allclose(m.get_state([c0, c1]), [0, 0, SQ2, SQ2])


@pytest.mark.parametrize("N", range(1, 6))
def test_scan_all_basis_inputs(N):
    for bits in itertools.product([0, 1], repeat=N):
        m = Machine(MachineConfig(N, 2, 2))
        regs = [m.alloc_local(r, 2) for r in range(N)]
        for r, b in enumerate(bits):
            if b:
                run_all(m, lambda ctx, q=regs[r][0]: ctx.x(q), ranks=[r])
        fwd = run_all(m, lambda ctx: qmpi.scan_parity(ctx, *regs[ctx.rank]))
        prefix = np.cumsum(bits) % 2
        state = m.get_state([reg[0] for reg in regs] + [reg[1] for reg in regs])
        idx = int(np.argmax(np.abs(state)))
        assert [(idx >> (N + i)) & 1 for i in range(N)] == list(prefix)
        assert fwd.ledger.totals == (N - 1, N - 1)
        inv = run_all(m, lambda ctx: qmpi.unscan_parity(ctx, *regs[ctx.rank]))
        assert inv.ledger.totals == (0, N - 1)
        assert all(m.is_zero(reg[1]) for reg in regs)


@given(seed=st.integers(0, 10**6), N=st.integers(2, 4))
def test_scan_unscan_restores_superposition(seed, N):
    rng = np.random.default_rng(seed)
    psi = random_state(N, rng)
    m = Machine(MachineConfig(N, 2, 2, seed=seed))
    regs = [m.alloc_local(r, 2) for r in range(N)]
    m.set_state([reg[0] for reg in regs], psi)
    run_all(m, lambda ctx: qmpi.scan_parity(ctx, *regs[ctx.rank]))
    run_all(m, lambda ctx: qmpi.unscan_parity(ctx, *regs[ctx.rank]))
    assert fidelity(m.get_state([reg[0] for reg in regs]), psi) >= 1 - 1e-10


def test_scatter_gather_round_trip():
    psi = random_state(3, np.random.default_rng(8))
    m = Machine(MachineConfig(4, 3, 1, seed=8))
    qs = m.alloc_local(0, 3)
    m.set_state(qs, psi)
    out = run_all(m, lambda ctx: qmpi.scatter_move(ctx, qs if ctx.rank == 0 else None, 0))
    assert out.ledger.totals == (3, 6)
    moved = [out.returns[r] for r in (1, 2, 3)]
    assert fidelity(m.get_state(moved), psi) >= 1 - 1e-10
    back = run_all(m, lambda ctx: qmpi.gather_move(
        ctx, None if ctx.rank == 0 else moved[ctx.rank - 1], 0))
    assert fidelity(m.get_state(back.returns[0]), psi) >= 1 - 1e-10


def test_scatter_to_full_rank_fails():
    m = Machine(MachineConfig(2, 1, 1))
    q = m.alloc_local(0)[0]
    m.alloc_local(1)
    with pytest.raises(AllocationError):
        run_all(m, lambda ctx: qmpi.scatter_move(ctx, [q] if ctx.rank == 0 else None, 0))


def test_tag_range_checked():
    m, qs = one_qubit_per_rank(2)
    with pytest.raises(ProtocolError):
        run_all(m, lambda ctx: qmpi.send(ctx, qs[0], 1, -1), ranks=[0])
