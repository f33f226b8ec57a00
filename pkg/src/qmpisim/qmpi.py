"""QMPI communication primitives.

Every primitive is a generator function that runs inside a rank program::

    def program(ctx):
        q = ctx.alloc()[0]
        yield from qmpi.send(ctx, q, dest=1, tag=0)

Each call updates the global state, the resource ledger and the event trace.
Collective calls must be made by every rank of the communicator in the same
order.  Copies received through ``recv``/``bcast_*`` are released by the
matching ``unrecv``/``unbcast``; targets and outputs the caller supplied to
``reduce_parity``/``scan_parity`` are reset to |0> but stay allocated.
"""

from __future__ import annotations

from typing import Optional, Sequence

from .errors import ProtocolError
from .machine import Communicator, QubitRef, RankContext
from .statevec import X, Z

MAX_TAG = 2**31


def _comm(ctx: RankContext, comm: Optional[Communicator]) -> Communicator:
    comm = comm or ctx.world
    comm.index(ctx.rank)
    return comm


def _check_tag(tag):
    if isinstance(tag, int) and not 0 <= tag < MAX_TAG:
        raise ProtocolError(f"tag must be a non-negative 31-bit integer, got {tag}")


def _require_fresh(ctx, qubit):
    if qubit.rank != ctx.rank:
        raise ProtocolError(f"rank {ctx.rank} cannot receive into {qubit}")
    if not ctx.machine.is_zero(qubit):
        raise ProtocolError(f"receiving qubit {qubit} is not a fresh |0> qubit")


def prepare_epr(ctx: RankContext, qubit: QubitRef, peer: int, tag, comm: Communicator = None):
    """Entangle a fresh EPR-buffer qubit with the peer's: (|00>+|11>)/sqrt2."""
    comm = _comm(ctx, comm)
    _check_tag(tag)
    if not ctx.machine.is_zero(qubit):
        raise ProtocolError(f"{qubit} is not a fresh |0> qubit")
    with ctx.primitive("epr" if ctx.label == "app" else ctx.label):
        yield from ctx.establish_epr([(qubit, peer, tag, comm)])
    return qubit


# -- entangled copy (fanout) ------------------------------------------------

def _copy_send(ctx, qubit, dest, tag, comm):
    half = ctx.acquire_epr_slot()
    yield from ctx.establish_epr([(half, dest, tag, comm)])
    ctx.cnot(qubit, half)
    parity = ctx.measure_and_free(half)
    ctx.send_bits(dest, parity, tag, comm, after=[ctx.last_event])


def _copy_recv(ctx, qubit, src, tag, comm):
    _require_fresh(ctx, qubit)
    half = ctx.acquire_epr_slot()
    yield from ctx.establish_epr([(half, src, tag, comm)])
    ctx.swap_into(half, qubit)
    msg = yield from ctx.recv_bits(src, tag, comm)
    ctx.fixup(X, qubit, msg.value, after=[msg])


def _uncopy_send(ctx, qubit, dest, tag, comm):
    # the copy holder measured in the X basis; a 1 flips the phase here
    msg = yield from ctx.recv_bits(dest, tag, comm)
    ctx.fixup(Z, qubit, msg.value, after=[msg])


def _uncopy_recv(ctx, qubit, src, tag, comm, release=True):
    ctx.h(qubit)
    if release:
        bit = ctx.measure_and_free(qubit)
    else:
        bit = ctx.measure(qubit)
        if bit:
            ctx.machine.state.apply_gate(X, [ctx.machine._pos[qubit]])
    ctx.send_bits(src, bit, tag, comm, after=[ctx.last_event])


def _copy_key(src, dest, tag, comm):
    return ("copy", src, dest, tag, comm)


def send(ctx, qubit, dest, tag, comm=None):
    comm = _comm(ctx, comm)
    _check_tag(tag)
    with ctx.primitive("copy"):
        yield from _copy_send(ctx, qubit, dest, tag, comm)
    ctx.machine.registry.setdefault(_copy_key(ctx.rank, dest, tag, comm), {})["src"] = qubit


def recv(ctx, qubit, src, tag, comm=None):
    comm = _comm(ctx, comm)
    _check_tag(tag)
    with ctx.primitive("copy"):
        yield from _copy_recv(ctx, qubit, src, tag, comm)
    ctx.machine.registry.setdefault(_copy_key(src, ctx.rank, tag, comm), {})["dst"] = qubit


def _take_copy(ctx, key, side, qubit):
    record = ctx.machine.registry.get(key)
    if not record or record.get(side) != qubit:
        raise ProtocolError(f"rank {ctx.rank}: no prior entangled copy of {qubit} for {key[1:4]}")
    del record[side]
    if not record:
        del ctx.machine.registry[key]


def unsend(ctx, qubit, dest, tag, comm=None):
    comm = _comm(ctx, comm)
    _take_copy(ctx, _copy_key(ctx.rank, dest, tag, comm), "src", qubit)
    with ctx.primitive("uncopy"):
        yield from _uncopy_send(ctx, qubit, dest, tag, comm)


def unrecv(ctx, qubit, src, tag, comm=None):
    """Uncompute and release a copy made by ``recv``."""
    comm = _comm(ctx, comm)
    _take_copy(ctx, _copy_key(src, ctx.rank, tag, comm), "dst", qubit)
    with ctx.primitive("uncopy"):
        _uncopy_recv(ctx, qubit, src, tag, comm)
    yield from ()


# -- move (teleportation) ---------------------------------------------------

def _move_send(ctx, qubit, dest, tag, comm):
    half = ctx.acquire_epr_slot()
    yield from ctx.establish_epr([(half, dest, tag, comm)])
    ctx.cnot(qubit, half)
    r = ctx.measure_and_free(half)
    x_event = ctx.last_event
    ctx.h(qubit)
    r |= 2 * ctx.measure_and_free(qubit)
    ctx.send_bits(dest, r, tag, comm, nbits=2, after=[x_event, ctx.last_event])


def _move_recv(ctx, qubit, src, tag, comm):
    _require_fresh(ctx, qubit)
    half = ctx.acquire_epr_slot()
    yield from ctx.establish_epr([(half, src, tag, comm)])
    ctx.swap_into(half, qubit)
    msg = yield from ctx.recv_bits(src, tag, comm)
    ctx.fixup(X, qubit, msg.value & 1, after=[msg])
    ctx.fixup(Z, qubit, msg.value & 2, after=[msg])
    return qubit


def send_move(ctx, qubit, dest, tag, comm=None):
    """Teleport ``qubit`` to ``dest``; the local qubit is released."""
    comm = _comm(ctx, comm)
    _check_tag(tag)
    with ctx.primitive("move"):
        yield from _move_send(ctx, qubit, dest, tag, comm)


def recv_move(ctx, qubit, src, tag, comm=None):
    comm = _comm(ctx, comm)
    _check_tag(tag)
    with ctx.primitive("move"):
        return (yield from _move_recv(ctx, qubit, src, tag, comm))


def unsend_move(ctx, qubit, dest, tag, comm=None):
    """Undo a ``send_move``: the qubit comes back from ``dest`` into ``qubit``."""
    comm = _comm(ctx, comm)
    with ctx.primitive("unmove"):
        return (yield from _move_recv(ctx, qubit, dest, tag, comm))


def unrecv_move(ctx, qubit, src, tag, comm=None):
    """Undo a ``recv_move``: teleport the qubit back to ``src``."""
    comm = _comm(ctx, comm)
    with ctx.primitive("unmove"):
        yield from _move_send(ctx, qubit, src, tag, comm)


# -- broadcast --------------------------------------------------------------

def _relative(ctx, comm, root):
    n = comm.size
    return (comm.index(ctx.rank) - comm.index(root)) % n, n


def _absolute(comm, root, v):
    return comm.ranks[(comm.index(root) + v) % comm.size]


def _register_bcast(ctx, comm, root, qubit, variant):
    ctx.machine.registry.setdefault(("bcast", ctx.rank, comm, root), []).append((qubit, variant))


def bcast_tree(ctx, qubit, root, comm=None):
    """Fan ``qubit`` out from ``root`` along a doubling tree of Send/Recv.

    In step k the 2**k ranks holding the value each copy it to one more rank.
    Non-root ranks pass a fresh compute qubit that receives the copy.
    """
    comm = _comm(ctx, comm)
    tag = ctx.machine.next_collective_tag(ctx.rank, comm, "bcast")
    v, n = _relative(ctx, comm, root)
    with ctx.primitive("bcast"):
        step = 1
        while step < n:
            if v < step and v + step < n:
                yield from _copy_send(ctx, qubit, _absolute(comm, root, v + step), (tag, step), comm)
            elif step <= v < 2 * step:
                yield from _copy_recv(ctx, qubit, _absolute(comm, root, v - step), (tag, step), comm)
            step *= 2
    _register_bcast(ctx, comm, root, qubit, "tree")


def bcast_cat(ctx, qubit, root, comm=None):
    """Constant-quantum-depth broadcast through a cat state.

    The spanning tree is a path starting at the root, so every node holds at
    most two EPR halves and all pairs are requested at once.  The root and
    every internal node measure the parity of their two qubits; node ``v``
    applies X when the XOR of the outcomes upstream of it is 1.  Each
    outcome travels to the next node as a classical bit and the running
    prefix is forwarded alongside it as fixup traffic.
    """
    comm = _comm(ctx, comm)
    tag = ctx.machine.next_collective_tag(ctx.rank, comm, "bcast")
    v, n = _relative(ctx, comm, root)
    with ctx.primitive("bcast"):
        if n > 1:
            left = _absolute(comm, root, v - 1) if v > 0 else None
            right = _absolute(comm, root, v + 1) if v < n - 1 else None
            if v > 0:
                _require_fresh(ctx, qubit)
            from_left = ctx.acquire_epr_slot() if left is not None else None
            to_right = ctx.acquire_epr_slot() if right is not None else None
            requests = []
            if from_left is not None:
                requests.append((from_left, left, (tag, "edge", v - 1), comm))
            if to_right is not None:
                requests.append((to_right, right, (tag, "edge", v), comm))
            yield from ctx.establish_epr(requests)

            if to_right is not None:
                ctx.cnot(qubit if v == 0 else from_left, to_right)
                outcome = ctx.measure_and_free(to_right)
                ctx.send_bits(right, outcome, (tag, "r", v), comm, after=[ctx.last_event])
            if v > 0:
                ctx.swap_into(from_left, qubit)
                r_msg = yield from ctx.recv_bits(left, (tag, "r", v - 1), comm)
                deps = [r_msg]
                prefix = r_msg.value
                if v > 1:
                    p_msg = yield from ctx.recv_bits(left, (tag, "p", v - 1), comm)
                    deps.append(p_msg)
                    prefix ^= p_msg.value
                ctx.fixup(X, qubit, prefix, after=deps)
                if right is not None:
                    ctx.send_bits(right, prefix, (tag, "p", v), comm, after=deps, fixup=True)
    _register_bcast(ctx, comm, root, qubit, "cat")


def unbcast(ctx, qubit, root, comm=None):
    """Uncompute a broadcast: copies are X-measured, the root fixes the phase."""
    comm = _comm(ctx, comm)
    stack = ctx.machine.registry.get(("bcast", ctx.rank, comm, root))
    if not stack or stack[-1][0] != qubit:
        raise ProtocolError(f"rank {ctx.rank}: no prior broadcast of {qubit} from root {root}")
    stack.pop()
    tag = ctx.machine.next_collective_tag(ctx.rank, comm, "unbcast")
    with ctx.primitive("unbcast"):
        if ctx.rank != root:
            _uncopy_recv(ctx, qubit, root, tag, comm)
        else:
            msgs = []
            for r in comm.ranks:
                if r != root:
                    msgs.append((yield from ctx.recv_bits(r, tag, comm)))
            if msgs:
                parity = 0
                for m in msgs:
                    parity ^= m.value
                ctx.fixup(Z, qubit, parity, after=msgs)


# -- parity reduce / scan ---------------------------------------------------

def _chain_forward(ctx, contrib, out, prev, nxt, tag, comm):
    if prev is not None:
        yield from _copy_recv(ctx, out, prev, tag, comm)
    ctx.cnot(contrib, out)
    if nxt is not None:
        yield from _copy_send(ctx, out, nxt, tag, comm)


def _chain_backward(ctx, contrib, out, prev, nxt, tag, comm, release):
    if nxt is not None:
        yield from _uncopy_send(ctx, out, nxt, tag, comm)
    ctx.cnot(contrib, out)
    if prev is not None:
        _uncopy_recv(ctx, out, prev, tag, comm, release=release)
    elif release:
        ctx.free(out)


def _reduce_chain(ctx, comm, root):
    # chain order ends at the root
    n = comm.size
    v = (comm.index(ctx.rank) - comm.index(root) - 1) % n
    prev = _absolute(comm, root, v) if v > 0 else None  # rank at chain position v-1
    nxt = _absolute(comm, root, v + 2) if v < n - 1 else None
    return v, prev, nxt


def reduce_parity(ctx, contrib, target, root, comm=None):
    """Root's fresh ``target`` receives the XOR of every rank's ``contrib``.

    Linear schedule: each rank keeps one output register holding the running
    parity and copies it to the next rank, N-1 EPR pairs in total.
    """
    comm = _comm(ctx, comm)
    tag = ctx.machine.next_collective_tag(ctx.rank, comm, "reduce")
    v, prev, nxt = _reduce_chain(ctx, comm, root)
    if ctx.rank == root:
        _require_fresh(ctx, target)
        out = target
    else:
        out = ctx.alloc(1)[0]
    with ctx.primitive("reduce"):
        yield from _chain_forward(ctx, contrib, out, prev, nxt, tag, comm)
    ctx.machine.registry.setdefault(("reduce", ctx.rank, comm, root), []).append((contrib, out, tag))


def unreduce_parity(ctx, contrib, target, root, comm=None):
    comm = _comm(ctx, comm)
    stack = ctx.machine.registry.get(("reduce", ctx.rank, comm, root))
    if not stack or stack[-1][0] != contrib:
        raise ProtocolError(f"rank {ctx.rank}: no prior reduce_parity of {contrib}")
    _, out, tag = stack.pop()
    if ctx.rank == root and out != target:
        raise ProtocolError(f"root target {target} does not match the reduction output {out}")
    v, prev, nxt = _reduce_chain(ctx, comm, root)
    with ctx.primitive("unreduce"):
        yield from _chain_backward(ctx, contrib, out, prev, nxt, tag, comm,
                                   release=ctx.rank != root)


def scan_parity(ctx, contrib, out, comm=None):
    """Inclusive prefix parity: rank i's fresh ``out`` gets contrib_0 ^ ... ^ contrib_i."""
    comm = _comm(ctx, comm)
    tag = ctx.machine.next_collective_tag(ctx.rank, comm, "scan")
    i = comm.index(ctx.rank)
    prev = comm.ranks[i - 1] if i > 0 else None
    nxt = comm.ranks[i + 1] if i < comm.size - 1 else None
    _require_fresh(ctx, out)
    with ctx.primitive("scan"):
        yield from _chain_forward(ctx, contrib, out, prev, nxt, tag, comm)
    ctx.machine.registry.setdefault(("scan", ctx.rank, comm), []).append((contrib, out, tag))


def unscan_parity(ctx, contrib, out, comm=None):
    comm = _comm(ctx, comm)
    stack = ctx.machine.registry.get(("scan", ctx.rank, comm))
    if not stack or stack[-1][:2] != (contrib, out):
        raise ProtocolError(f"rank {ctx.rank}: no prior scan_parity into {out}")
    _, _, tag = stack.pop()
    i = comm.index(ctx.rank)
    prev = comm.ranks[i - 1] if i > 0 else None
    nxt = comm.ranks[i + 1] if i < comm.size - 1 else None
    with ctx.primitive("unscan"):
        yield from _chain_backward(ctx, contrib, out, prev, nxt, tag, comm, release=False)


# -- scatter / gather with move semantics -----------------------------------

def scatter_move(ctx, qubits: Optional[Sequence[QubitRef]], root, comm=None):
    """Teleport the root's i-th qubit to the i-th non-root rank (comm order).

    Non-root ranks pass ``None``; each allocates a compute qubit and gets it
    back as the return value.  The root returns an empty list.
    """
    comm = _comm(ctx, comm)
    tag = ctx.machine.next_collective_tag(ctx.rank, comm, "scatter")
    others = [r for r in comm.ranks if r != root]
    with ctx.primitive("scatter_move"):
        if ctx.rank == root:
            qubits = list(qubits or [])
            if len(qubits) != len(others):
                raise ProtocolError(f"root must scatter {len(others)} qubits, got {len(qubits)}")
            for q, dest in zip(qubits, others):
                yield from _move_send(ctx, q, dest, (tag, dest), comm)
            return []
        fresh = ctx.alloc(1)[0]
        yield from _move_recv(ctx, fresh, root, (tag, ctx.rank), comm)
        return fresh


def gather_move(ctx, qubit: Optional[QubitRef], root, comm=None):
    """Reverse of :func:`scatter_move`; the root returns the gathered qubits."""
    comm = _comm(ctx, comm)
    tag = ctx.machine.next_collective_tag(ctx.rank, comm, "gather")
    others = [r for r in comm.ranks if r != root]
    with ctx.primitive("gather_move"):
        if ctx.rank == root:
            fresh = ctx.alloc(len(others)) if others else []
            for q, src in zip(fresh, others):
                yield from _move_recv(ctx, q, src, (tag, src), comm)
            return fresh
        yield from _move_send(ctx, qubit, root, (tag, ctx.rank), comm)
        return None
