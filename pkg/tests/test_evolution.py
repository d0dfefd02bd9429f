import numpy as np
import pytest

from dropletmm import scenarios
from dropletmm.evolution import (BOTH, JUMP, NO_JUMP, BranchExplosion, ForcingSchedule, PartitionSpec,
                                 ScheduleError, Trace, boundary_constant, branch_ledger, detect_jumps,
                                 dissipation_ledger_check, flux_term, initial_entry, jump_threshold, nested,
                                 run_monotone, run_piecewise, run_segment, segment_times, stable_initial)
from dropletmm.grid import build_interval_domain
from dropletmm.solver import MAX, MIN


def test_schedule_validation():
    with pytest.raises(ScheduleError):
        ForcingSchedule((0, 1), (1.0, 1.0))
    with pytest.raises(ScheduleError):
        ForcingSchedule((0, 0), (1.0, 2.0))
    with pytest.raises(ScheduleError):
        ForcingSchedule((0, 1), (1e-9, 1.0))
    s = ForcingSchedule((0, 2, 3, 5), (1.0, 2.0, 1.5, 2.5))
    assert s.amplitude(1.0) == 1.5
    assert [s.selection(i) for i in range(3)] == [MAX, MIN, MAX]
    assert s.monotonicity_changes() == [1, 2]


def test_partition_contains_breakpoints_and_mandatory():
    s = ForcingSchedule((0, 1, 3), (1.0, 2.0, 1.0))
    p = PartitionSpec(0.3, mandatory=(2.05,))
    ts = p.times(s)
    assert {0.0, 1.0, 2.05, 3.0} <= set(np.round(ts, 12))
    assert np.max(np.diff(ts)) <= 0.3 + 1e-12
    assert np.max(np.diff(p.refined().times(s))) <= 0.15 + 1e-12
    seg = segment_times(s, p, 1)
    assert seg[0] == 1.0 and seg[-1] == 3.0
    with pytest.raises(ScheduleError):
        PartitionSpec(0.0)


def test_jump_threshold():
    assert jump_threshold(np.zeros(10, bool)) == 4
    assert jump_threshold(np.ones(1000, bool)) == 10


def test_boundary_constant_1d():
    # one DIRICHLET cell with phi = 1 and a single active edge of weight 1/h
    d = build_interval_domain(2.0, 1 / 64)
    assert boundary_constant(d) == pytest.approx(64.0)


def test_flux_linear_profile(params):
    d = build_interval_domain(2.0, 1 / 32)
    init = scenarios.pinned_profile(d, params, scenarios.distance_mask(d, 1.0), 1.0)
    # B(u, psi) = (1/h) (u0 - u1) * 1, with u0 - u1 = h/s for s = 1 + h
    s = 1 + 1 / 32
    assert flux_term(init, 0.1) == pytest.approx(2 * 0.1 / s, rel=1e-12)


def test_monotone_sweep_nested_and_edi(params):
    sc = scenarios.hysteresis_loop_1d(h=1 / 64)
    up = run_segment(sc.domain, params, sc.initial, 1.0, 1.3, 15)
    assert nested(up.masks, increasing=True)
    rep = dissipation_ledger_check(up)
    assert rep.passed
    assert rep.C_empirical <= rep.C_bound
    down = run_segment(sc.domain, params, up.entries[-1].profile, 1.3, 0.7, 20)
    assert nested(down.masks, increasing=False)
    assert dissipation_ledger_check(down).passed
    assert len(up.rows()) == 16 and len(up.rows()[0]) == 8


def test_non_monotone_rejected(params):
    sc = scenarios.hysteresis_loop_1d(h=1 / 32)
    tr = Trace(sc.domain, params)
    tr.entries.append(initial_entry(sc.initial, 0.0, 1.0, params))
    with pytest.raises(ScheduleError):
        run_monotone(tr, [1, 2], [1.1, 1.05], MAX)


def test_constant_step_is_free(params):
    sc = scenarios.hysteresis_loop_1d(h=1 / 32)
    tr = Trace(sc.domain, params)
    tr.entries.append(initial_entry(sc.initial, 0.0, 1.0, params))
    run_monotone(tr, [1.0], [1.0], MAX)
    assert tr.entries[-1].profile is sc.initial
    assert tr.ledger.entries[-1].slack == 0.0


def test_stable_initial_is_minimizer(params):
    d = build_interval_domain(2.0, 1 / 64)
    p = stable_initial(d, params, d.dirichlet, 1.0)
    assert abs(scenarios.free_boundary_position_1d(p) - 1 / 1.1) <= 2 / 64


@pytest.fixture(scope="module")
def two_sided_tree():
    sc = scenarios.two_sided_1d(h=1 / 32)
    sched = ForcingSchedule((0.0, 26.0, 42.0), (0.3, 0.56, 0.4))
    return sc, run_piecewise(sc.initial, sched, PartitionSpec(1.0), sc.params, branch_policy=BOTH)


def test_branching_two_children(two_sided_tree):
    sc, tree = two_sided_tree
    ids = sorted(tree.nodes)
    assert ids == ["r", "r.J", "r.N"]
    assert {n.id for n in tree.leaves()} == {"r.J", "r.N"}
    assert tree.nodes["r.J"].decision == JUMP and tree.nodes["r.N"].decision == NO_JUMP
    jmp = branch_ledger(tree, "r.J").entries
    nj = branch_ledger(tree, "r.N").entries
    k = 26
    assert jmp[k].t == nj[k].t == 26.0
    assert np.all(jmp[k].profile.mask[sc.domain.interior])
    assert np.array_equal(nj[k].profile.mask, nj[k - 1].profile.mask)
    assert np.array_equal(jmp[k + 1].profile.mask, jmp[k].profile.mask)
    assert not np.array_equal(jmp[k + 1].profile.mask, nj[k + 1].profile.mask)
    for leaf in ("r.J", "r.N"):
        assert dissipation_ledger_check(branch_ledger(tree, leaf)).passed
    d = tree.to_list()
    assert [n["id"] for n in d] == ids and d[0]["children"] == ["r.J", "r.N"]


def test_single_branch_policies():
    sc = scenarios.two_sided_1d(h=1 / 32)
    sched = ForcingSchedule((0.0, 26.0, 30.0), (0.3, 0.56, 0.52))
    for policy in (JUMP, NO_JUMP):
        tree = run_piecewise(sc.initial, sched, PartitionSpec(1.0), sc.params, branch_policy=policy)
        assert len(tree.nodes) == 1
        merged = np.all(tree.nodes["r"].trace.entries[26].profile.mask[sc.domain.interior])
        assert merged == (policy == JUMP)


def test_branch_limit():
    sc = scenarios.two_sided_1d(h=1 / 32)
    sched = ForcingSchedule((0.0, 26.0, 30.0), (0.3, 0.56, 0.52))
    with pytest.raises(BranchExplosion):
        run_piecewise(sc.initial, sched, PartitionSpec(1.0), sc.params, branch_policy=BOTH, max_branches=1)
    with pytest.raises(ValueError):
        run_piecewise(sc.initial, sched, PartitionSpec(1.0), sc.params, branch_policy="sometimes")


def test_detect_jumps_confirms_merge():
    sc = scenarios.two_sided_1d(h=1 / 32)
    tr = run_segment(sc.domain, sc.params, sc.initial, 0.3, 0.6, 30)
    events = detect_jumps(tr)
    assert len(events) == 1
    ev = events[0]
    assert 0.5 <= ev.a_lo < ev.a_hi <= 0.6
    assert ev.cells_changed > jump_threshold(ev.mask_plus)
    assert not np.all(ev.mask_minus[sc.domain.interior]) and np.all(ev.mask_plus[sc.domain.interior])
