from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from qmpisim import qmpi
from qmpisim.apps import ChemTermSpec, TfimSpec, chem_term, tfim_evolve
from qmpisim.errors import InfeasibleScheduleError, ModelError, TraceError
from qmpisim.machine import Machine, MachineConfig
from qmpisim.sendq import (
    CLASSICAL, EPR, GATE, MEASURE, Event, EventTrace, SendqParams, analytic_bcast_cat_delay,
    analytic_bcast_tree_delay, analytic_chem_delay, analytic_tfim_delays, ceil_log2,
    count_epr_for_terms, evaluate_trace, rotation_busy_time, tfim_node_count_bound,
)

from conftest import one_qubit_per_rank, run_all


def epr(i, a, b, deps=()):
    return Event(i, EPR, (a, b), tuple(deps))


def test_single_epr():
    report = evaluate_trace(EventTrace([epr(0, 0, 1)]), SendqParams(E=3, N=2))
    assert report.critical_path_delay == 3
    assert report.epr_pairs == 1


def test_eprs_sharing_a_node_serialize():
    trace = EventTrace([epr(0, 0, 1), epr(1, 1, 2)])
    assert evaluate_trace(trace, SendqParams(E=3, N=3)).critical_path_delay == 6


def test_disjoint_eprs_run_in_parallel():
    trace = EventTrace([epr(0, 0, 1), epr(1, 2, 3)])
    assert evaluate_trace(trace, SendqParams(E=3, N=4)).critical_path_delay == 3


def test_rotations_share_one_factory():
    trace = EventTrace([Event(i, GATE, (0,), gate="RZ", is_rotation=True) for i in range(3)])
    p = SendqParams(N=1, D_R=5)
    assert evaluate_trace(trace, p).critical_path_delay == 15
    assert evaluate_trace(trace, p.replace(rotation_factories_per_node=3)).critical_path_delay == 5
    assert rotation_busy_time(trace, p) == {0: 15}


def test_classical_is_free_but_counted():
    trace = EventTrace([
        Event(0, MEASURE, (0,)), Event(1, CLASSICAL, (0, 1), (0,), bits=2),
        Event(2, CLASSICAL, (0, 1), (1,), bits=3),
    ])
    report = evaluate_trace(trace, SendqParams(N=2, D_M=Fraction(1, 2)))
    assert report.classical_bits == 5
    assert report.critical_path_delay == Fraction(1, 2)


def test_trace_errors():
    with pytest.raises(TraceError):
        evaluate_trace(EventTrace([epr(0, 0, 1, [1]), epr(1, 0, 1, [0])]), SendqParams(N=2))
    with pytest.raises(TraceError):
        evaluate_trace(EventTrace([epr(0, 0, 5)]), SendqParams(N=2))
    with pytest.raises(TraceError):
        evaluate_trace(EventTrace([epr(0, 1, 1)]), SendqParams(N=2))
    with pytest.raises(TraceError):
        evaluate_trace(EventTrace([epr(0, 0, 1, [7])]), SendqParams(N=2))


def test_param_validation():
    with pytest.raises(ModelError):
        SendqParams(E=-1)
    with pytest.raises(ModelError):
        SendqParams(D_R=0, D_G=1)
    with pytest.raises(ModelError):
        SendqParams(rotation_factories_per_node=0)


def test_analytic_bcast_examples():
    assert analytic_bcast_tree_delay(8, SendqParams(E=1)) == 3
    assert analytic_bcast_tree_delay(1, SendqParams(E=1)) == 0
    assert analytic_bcast_tree_delay(5, SendqParams(E=2)) == 6
    p = SendqParams(E=1, D_M=Fraction(1, 10), D_F=Fraction(1, 20))
    assert analytic_bcast_cat_delay(p) == Fraction(215, 100)
    assert analytic_bcast_cat_delay(p.replace(E=0)) == Fraction(3, 20)
    assert analytic_bcast_cat_delay(SendqParams(E=5)) == 10
    assert [ceil_log2(n) for n in (1, 2, 3, 4, 5, 8, 9)] == [0, 1, 2, 2, 3, 3, 4]


def test_analytic_tfim_examples():
    p = SendqParams(D_R=1, E=10)
    assert analytic_tfim_delays(8, 4, 2, p).d_trotter == 4
    assert analytic_tfim_delays(8, 4, 2, p).per_step_delay == 20
    assert analytic_tfim_delays(8, 4, 1, p).per_step_delay == 22
    with pytest.raises(ModelError):
        analytic_tfim_delays(9, 4, 2, p)


def test_analytic_chem_examples():
    p = SendqParams(E=1, D_R=10)
    # the in_place closed form gives 2*1*2 + 10
    est = {m: analytic_chem_delay(m, 4, p) for m in ("in_place", "out_of_place", "constant_depth")}
    assert (est["in_place"].delay, est["in_place"].epr) == (14, 6)
    assert (est["out_of_place"].delay, est["out_of_place"].epr) == (14, 4)
    assert (est["constant_depth"].delay, est["constant_depth"].epr) == (12, 4)
    assert est["constant_depth"].min_epr_slots == 2
    with pytest.raises(ModelError):
        analytic_chem_delay("bogus", 4, p)


def test_node_count_bound():
    assert tfim_node_count_bound(16, 10, 5) == 32
    assert tfim_node_count_bound(1, 1, 1) == 1
    assert tfim_node_count_bound(16, 1, 100) == 0
    with pytest.raises(ModelError):
        tfim_node_count_bound(4, 1, 0)


def test_count_epr_for_terms():
    spread = {q: q for q in range(4)}
    assert count_epr_for_terms([[0, 1, 2, 3]], spread, "in_place") == 6
    assert count_epr_for_terms([[0, 1, 2, 3]], spread, "out_of_place") == 4
    assert count_epr_for_terms([[0, 1, 2, 3]], {q: 0 for q in range(4)}, "in_place") == 0
    paired = {0: 0, 1: 0, 2: 1, 3: 1}
    assert count_epr_for_terms([[0, 1], [2, 3]], paired, "in_place") == 0
    assert count_epr_for_terms([[0, 1, 2, 3]], paired, "in_place") == 2
    with pytest.raises(ModelError):
        count_epr_for_terms([[0, 9]], spread, "in_place")


def bcast_trace(N, variant, S=2):
    m, qs = one_qubit_per_rank(N, S=S)
    fn = qmpi.bcast_tree if variant == "tree" else qmpi.bcast_cat
    return run_all(m, lambda ctx: fn(ctx, qs[ctx.rank], 0)).trace


@pytest.mark.parametrize("N", range(2, 7))
def test_tree_trace_matches_formula(N):
    p = SendqParams(N=N, E=Fraction(3, 2))
    assert evaluate_trace(bcast_trace(N, "tree"), p).critical_path_delay == \
        analytic_bcast_tree_delay(N, p)


@pytest.mark.parametrize("N", range(3, 7))
def test_cat_trace_matches_formula(N):
    p = SendqParams(N=N, E=2, D_M=Fraction(1, 10), D_F=Fraction(1, 20))
    assert evaluate_trace(bcast_trace(N, "cat"), p).critical_path_delay == \
        analytic_bcast_cat_delay(p)


def test_cat_trace_two_nodes_uses_one_pair():
    p = SendqParams(N=2, E=2, D_M=Fraction(1, 10), D_F=Fraction(1, 20))
    assert evaluate_trace(bcast_trace(2, "cat"), p).critical_path_delay == \
        p.E + p.D_M + p.D_F


def chem_run(method, k):
    N = k + 1 if method != "in_place" else k
    m = Machine(MachineConfig(N, 2, 2, max_total_qubits=4 * N))
    return chem_term(m, ChemTermSpec(tuple(range(k)), 0.3, method), layout={q: q for q in range(k)})


@pytest.mark.parametrize("method", ["in_place", "out_of_place", "constant_depth"])
@pytest.mark.parametrize("k", range(2, 7))
def test_chem_trace_matches_formula(method, k):
    result = chem_run(method, k)
    p = SendqParams(N=len(result.ranks) + (result.aux_rank is not None), E=1, D_R=10, S=2)
    est = result.analytic(method, p)
    report = result.cost(p)
    assert report.critical_path_delay == est.delay
    assert report.epr_pairs == est.epr == result.ledger.epr_pairs_consumed


TRACES = {
    "tree": lambda: (bcast_trace(5, "tree"), 5),
    "cat": lambda: (bcast_trace(5, "cat"), 5),
    "chem": lambda: (chem_run("in_place", 5).trace, 5),
    "chem_cd": lambda: (chem_run("constant_depth", 4).trace, 5),
}
_cache = {}


def cached_trace(name):
    if name not in _cache:
        _cache[name] = TRACES[name]()
    return _cache[name]


times = st.fractions(min_value=0, max_value=5, max_denominator=8)


@given(name=st.sampled_from(sorted(TRACES)), field=st.sampled_from(["E", "D_R", "D_M", "D_F"]),
       base=st.tuples(times, times, times, times), bump=st.fractions(0, 3, max_denominator=8))
def test_delay_is_monotone(name, field, base, bump):
    trace, N = cached_trace(name)
    E, D_R, D_M, D_F = base
    p = SendqParams(N=N, E=E, D_R=D_R, D_M=D_M, D_F=D_F)
    q = p.replace(**{field: getattr(p, field) + bump})
    assert evaluate_trace(trace, q).critical_path_delay >= \
        evaluate_trace(trace, p).critical_path_delay


@pytest.mark.parametrize("name", sorted(TRACES))
def test_epr_intervals_never_overlap_at_a_node(name):
    trace, N = cached_trace(name)
    p = SendqParams(N=N, E=Fraction(7, 3), D_R=2, D_M=1, D_F=1)
    start = evaluate_trace(trace, p).start_times
    by_node = {}
    for ev in trace.events:
        if ev.kind == EPR:
            for r in ev.ranks:
                by_node.setdefault(r, []).append(start[ev.id])
    for starts in by_node.values():
        starts.sort()
        assert all(b - a >= p.E for a, b in zip(starts, starts[1:]))


@pytest.mark.parametrize("name", sorted(TRACES))
def test_counts_are_conserved(name):
    trace, N = cached_trace(name)
    report = evaluate_trace(trace, SendqParams(N=N))
    assert report.epr_pairs == trace.count(EPR)
    assert report.classical_bits == sum(ev.bits for ev in trace.events if ev.kind == CLASSICAL)


def test_s_infeasible_trace_is_rejected():
    trace = bcast_trace(4, "cat", S=2)
    assert evaluate_trace(trace, SendqParams(N=4, S=2)).critical_path_delay == 2
    with pytest.raises(InfeasibleScheduleError):
        evaluate_trace(trace, SendqParams(N=4, S=1))


def test_trace_serialization_round_trip():
    trace = bcast_trace(4, "cat")
    again = EventTrace.from_list(trace.to_list())
    assert again.to_list() == trace.to_list()
    p = SendqParams(N=4, D_M=1)
    assert evaluate_trace(again, p).critical_path_delay == evaluate_trace(trace, p).critical_path_delay


def test_cost_report_to_dict():
    d = evaluate_trace(bcast_trace(3, "tree"), SendqParams(N=3, E=Fraction(1, 3))).to_dict()
    assert d["critical_path_delay_exact"] == "2/3"
    assert set(d["per_node_busy_time"]) == {"0", "1", "2"}


def test_tfim_rotation_busy_time():
    m = Machine(MachineConfig(2, 3, 2))
    result = tfim_evolve(m, TfimSpec(4, trotter_steps=2))
    p = SendqParams(N=2, E=0, D_R=1)
    d = analytic_tfim_delays(4, 2, 2, p).d_trotter
    assert rotation_busy_time(result.trace, p) == {0: 2 * d, 1: 2 * d}
