"""Acceptance criteria, each checked at its stated tolerance.

Every test records one PASS/FAIL line; the lines are printed in the terminal
summary (see conftest.py) and, with ``-s``, as each test finishes.
"""

import math
import time

import numpy as np
import pytest
from scipy import optimize

from dropletmm import oracles, scenarios, verify
from dropletmm.evolution import (BOTH, ForcingSchedule, PartitionSpec, branch_ledger, dissipation_ledger_check,
                                 run_piecewise, run_segment)
from dropletmm.grid import build_interval_domain
from dropletmm.solver import MinimizeSpec, minimize, slope_report

RESULTS: dict[int, str] = {}
P = scenarios.STANDARD


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)


def _timed(fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t0


def _position(profile):
    return scenarios.free_boundary_position_1d(profile)


# ---------------------------------------------------------------------------
# shared runs (criteria 7 and 9 reuse them)


@pytest.fixture(scope="module")
def advancing_1d():
    h = 1 / 512

    def run():
        d = build_interval_domain(2.0, h)
        return minimize(MinimizeSpec(d.dirichlet.copy(), 1.0), d, P)

    res, dt = _timed(run)
    return h, res, dt


@pytest.fixture(scope="module")
def loop_1d():
    sc = scenarios.hysteresis_loop_1d(h=1 / 512, da=0.01)
    tree, dt = _timed(run_piecewise, sc.initial, sc.schedule, PartitionSpec(1.0), P, branch_policy=BOTH)
    return sc, tree, dt


@pytest.fixture(scope="module")
def radial_2d():
    h = 1 / 64

    def run():
        sc = scenarios.radial(h=h, half_box=8.0, amplitude=2.0)
        return sc, minimize(MinimizeSpec(sc.domain.dirichlet.copy(), 2.0), sc.domain, P)

    (sc, res), dt = _timed(run)
    return h, sc, res, dt


@pytest.fixture(scope="module")
def refinement_runs():
    sc = scenarios.radial(h=1 / 16, half_box=4.0, amplitude=1.0, stable=True)
    t0 = time.perf_counter()
    coarse = run_segment(sc.domain, P, sc.initial, 1.0, 2.0, 16)
    fine = run_segment(sc.domain, P, sc.initial, 1.0, 2.0, 64)
    return sc, coarse, fine, time.perf_counter() - t0


def _branch_run(sc, peak, a_start, da, a_end):
    n_up = int(round((peak - a_start) / da))
    n_down = int(round((peak - a_end) / da))
    sched = ForcingSchedule((0.0, float(n_up), float(n_up + n_down)), (a_start, peak, a_end))
    tree = run_piecewise(sc.initial, sched, PartitionSpec(1.0), sc.params, branch_policy=BOTH)
    return tree, n_up


@pytest.fixture(scope="module")
def branching_runs():
    t0 = time.perf_counter()
    sc1 = scenarios.two_sided_1d(h=1 / 128, a_start=0.3)
    tree1, k1 = _branch_run(sc1, 0.56, 0.3, 0.01, 0.4)
    sc2 = scenarios.two_disks(h=1 / 8, a_start=0.5)
    tree2, k2 = _branch_run(sc2, 1.6, 0.5, 0.05, 0.5)
    return [(sc1, tree1, k1, 0.01), (sc2, tree2, k2, 0.05)], time.perf_counter() - t0


# ---------------------------------------------------------------------------


def test_criterion_1_advancing_1d(advancing_1d):
    h, res, dt = advancing_1d
    ref = oracles.oracle_1d(1.0, 0.0, P)
    s = _position(res.profile)
    e = res.breakdown.total_E
    ok_s = abs(s - ref.s_star) <= 2 * h
    ok_e = abs(e - 2.2) <= 1e-6
    ok_t = dt < 1.0
    record(1, ok_s and ok_e and ok_t,
           f"s={s:.6f} (oracle {ref.s_star:.6f}, |ds|={abs(s - ref.s_star):.2e} <= {2 * h:.2e}: {ok_s}); "
           f"E={e:.8f} (|E-2.2|={abs(e - 2.2):.2e} <= 1e-6: {ok_e}); {dt:.2f} s < 1 s: {ok_t}")
    assert ok_s and ok_e and ok_t


def _legs(entries, breaks):
    return [[e for e in entries if lo <= e.t <= hi] for lo, hi in zip(breaks[:-1], breaks[1:])]


def test_criterion_2_hysteresis_loop(loop_1d):
    sc, tree, dt = loop_1d
    h = sc.domain.h
    da = 0.01
    leaves = tree.leaves()
    entries = branch_ledger(tree, leaves[0].id).entries
    up, down, up2 = _legs(entries, sc.schedule.times)
    masks_equal = [np.array_equal(e.profile.mask, up[0].profile.mask) for e in up]
    # literal pinning clauses
    pinned_up = all(eq for e, eq in zip(up, masks_equal) if 0.8 <= e.amplitude <= 1.1 + 1e-12)
    peak_mask = down[0].profile.mask
    pinned_down = all(np.array_equal(e.profile.mask, peak_mask) for e in down if e.amplitude >= 0.8 - 1e-12)
    # depinning amplitude per leg against the oracle applied to the pinned position
    depin_ok, depin_txt = True, []
    for leg in (up, down, up2):
        s0 = _position(leg[0].profile)
        moved = next((e for e in leg[1:] if not np.array_equal(e.profile.mask, leg[0].profile.mask)), None)
        pred = next((e.amplitude for e in leg[1:] if oracles.oracle_1d(e.amplitude, s0, P).regime != oracles.PINNED),
                    None)
        got = None if moved is None else moved.amplitude
        ok = got is not None and pred is not None and abs(got - pred) <= da + 1e-9
        depin_ok &= ok
        depin_txt.append(f"{got} vs {pred}")
    # every state against the oracle started from the previous position
    worst = 0.0
    for a, b in zip(entries[:-1], entries[1:]):
        ref = oracles.oracle_1d(b.amplitude, _position(a.profile), P)
        worst = max(worst, abs(_position(b.profile) - ref.s_star))
    pos_ok = worst <= 2 * h
    one_branch = len(leaves) == 1
    ok_t = dt < 10.0
    ok = pinned_up and pinned_down and depin_ok and pos_ok and one_branch and ok_t
    first_down = next(e.amplitude for e in down if not np.array_equal(e.profile.mask, peak_mask))
    record(2, ok,
           f"pinned a in [0.8,1.1] on increase: {pinned_up}; constant until a<0.8 on decrease: {pinned_down} "
           f"(front at s={_position(down[0].profile):.4f} recedes at a={first_down:.2f}); "
           f"depinning a (measured vs oracle) {', '.join(depin_txt)}: {depin_ok}; "
           f"worst |s - oracle| {worst:.2e} <= {2 * h:.2e}: {pos_ok}; branches={len(leaves)}; {dt:.2f} s < 10 s: {ok_t}")
    assert ok


def test_criterion_3_radial(radial_2d):
    h, sc, res, dt = radial_2d
    rho = optimize.brentq(lambda r: 1.1 * r * math.log(r) - 2.0, 1.0, 5.0, xtol=1e-14)
    r_meas = scenarios.mean_radius(res.profile)
    slope_sq = slope_report(res, P).mean_slope_sq
    ok_r = abs(r_meas - rho) <= 2 * h
    ok_s = abs(slope_sq - 1.21) <= 0.15
    cells = sc.domain.size
    ok_60 = dt < 60.0
    ok_5 = dt < 5.0
    ok = ok_r and ok_s and ok_60 and ok_5
    record(3, ok,
           f"mean radius {r_meas:.5f} vs {rho:.5f} (|dr| {abs(r_meas - rho):.2e} <= {2 * h:.2e}: {ok_r}); "
           f"slope^2 {slope_sq:.4f} (within 0.15 of 1.21: {ok_s}); {cells} cells in {dt:.1f} s "
           f"(< 60 s: {ok_60}; < 5 s: {ok_5})")
    assert ok


def test_criterion_4_brute_force():
    rows, dt = _timed(verify.suite_lattice, 2024, n=100)
    fails = [r for r in rows if not r.passed]
    gap = max(r.measured for r in rows if r.prop.endswith("energy_gap"))
    ok = not fails and dt < 120.0
    record(4, ok, f"100 instances, {len(rows)} checks, {len(fails)} failed; worst energy gap {gap:.1e}; "
                  f"{dt:.1f} s < 120 s: {dt < 120.0}")
    assert ok, fails[:5]


def test_criterion_5_refinement(refinement_runs):
    sc, coarse, fine, dt = refinement_runs
    final_diff = int(np.count_nonzero(coarse.entries[-1].profile.mask ^ fine.entries[-1].profile.mask))
    gaps = [abs(c.J - f.J) for c, f in zip(coarse.entries, fine.entries[::4])]
    assert all(abs(c.t - f.t) < 1e-12 for c, f in zip(coarse.entries, fine.entries[::4]))
    worst = max(gaps)
    ok = final_diff == 0 and worst <= 1e-8 and dt < 30.0
    record(5, ok, f"N=16 vs 64 on {sc.domain.shape} cells: final masks differ in {final_diff} cells; "
                  f"worst breakpoint |dJ| {worst:.1e} <= 1e-8; {dt:.1f} s < 30 s: {dt < 30.0}")
    assert ok


def test_criterion_6_comparison():
    rows = verify.suite_comparison(2024, n=50)
    viol = sum(int(r.measured) for r in rows)
    record(6, viol == 0, f"50 pairs, {len(rows)} inclusion checks, {viol} violating cells")
    assert viol == 0


def test_criterion_7_dissipation(loop_1d, refinement_runs, branching_runs):
    traces = []
    sc, tree, _ = loop_1d
    traces += [(f"loop:{n.id}", branch_ledger(tree, n.id)) for n in tree.leaves()]
    _, coarse, fine, _ = refinement_runs
    traces += [("refine:N16", coarse), ("refine:N64", fine)]
    runs, _ = branching_runs
    for bsc, btree, _, _ in runs:
        traces += [(f"{bsc.name}:{n.id}", branch_ledger(btree, n.id)) for n in btree.leaves()]
    parts, ok = [], True
    for name, tr in traces:
        rep = dissipation_ledger_check(tr, 1e-8)
        good = rep.worst_slack >= -rep.tol and rep.C_empirical <= rep.C_bound and np.isfinite(rep.total_variation)
        ok &= good
        parts.append(f"{name} steps={len(rep.slacks)} min slack {rep.worst_slack:.1e} C_emp {rep.C_empirical:.2f}"
                     f"/{rep.C_bound:.3g} TV {rep.total_variation:.3g}")
    record(7, ok, "; ".join(parts))
    assert ok


def test_criterion_8_branching(branching_runs):
    runs, dt = branching_runs
    ok, parts = True, []
    for sc, tree, k, da in runs:
        leaves = sorted(n.id for n in tree.leaves())
        good = leaves == ["r.J", "r.N"]
        if good:
            jmp = branch_ledger(tree, "r.J").entries
            nj = branch_ledger(tree, "r.N").entries
            differ = bool(np.any(jmp[k + 1].profile.mask ^ nj[k + 1].profile.mask))
            right = np.array_equal(jmp[k + 1].profile.mask, jmp[k].profile.mask)
            left = np.array_equal(nj[k].profile.mask, nj[k - 1].profile.mask)
            good = differ and right and left
            txt = f"{sc.name}: 2 branches, differ after t1 {differ}, jump right-continuous {right}, no-jump = left limit {left}"
            if sc.domain.dim == 1:
                full = next(e.amplitude for e in jmp if np.all(e.profile.mask[sc.domain.interior]))
                fj = oracles.oracle_1d_two_sided(0.3, 0.0, 0.0, 2.0, P).F_jump
                fj_ok = abs(full - fj) <= da + 1e-9
                good &= fj_ok
                txt += f", merge at a={full:.2f} vs F_jump {fj:.4f}: {fj_ok}"
        else:
            txt = f"{sc.name}: leaves {leaves}"
        ok &= good
        parts.append(txt)
    ok &= dt < 120.0
    record(8, ok, "; ".join(parts) + f"; {dt:.1f} s < 120 s: {dt < 120.0}")
    assert ok


def test_criterion_9_domain_safety(advancing_1d, loop_1d, radial_2d, refinement_runs, branching_runs):
    profiles = [advancing_1d[1].profile, radial_2d[2].profile]
    sc, tree, _ = loop_1d
    for n in tree.leaves():
        profiles += [e.profile for e in branch_ledger(tree, n.id).entries]
    _, coarse, fine, _ = refinement_runs
    profiles += [e.profile for e in coarse.entries + fine.entries]
    runs, _ = branching_runs
    for _, btree, _, _ in runs:
        for n in btree.leaves():
            profiles += [e.profile for e in branch_ledger(btree, n.id).entries]
    ring_viol = guard_viol = 0
    for p in profiles:
        d = p.domain
        ring_viol += int(np.count_nonzero(d.dirichlet_ring() & ~p.mask))
        guard_viol += int(np.count_nonzero(p.mask & (d.guard | d.guard_adjacent())))
    ok = ring_viol == 0 and guard_viol == 0
    record(9, ok, f"{len(profiles)} states: dry ring cells {ring_viol}, guard contacts {guard_viol}")
    assert ok
