"""Property suites over deterministic seeded instances.

Every check yields a row (property, instance, measured, bound, pass); a suite
passes when all of its rows do.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import instances, oracles, scenarios
from .evolution import (BOTH, ForcingSchedule, PartitionSpec, branch_ledger, dissipation_ledger_check,
                        run_piecewise, run_segment, stable_initial)
from .solver import MAX, MIN, MinimizeSpec, minimize, slope_report

SUITES = ("lattice", "comparison", "refinement", "edi", "branching", "oracle")
REPORT_COLUMNS = ["property", "instance", "measured", "bound", "pass"]


class UnknownSuite(ValueError):
    pass


@dataclass(frozen=True)
class Row:
    prop: str
    instance: str
    measured: float
    bound: float
    passed: bool

    def as_list(self) -> list:
        return [self.prop, self.instance, float(self.measured), float(self.bound), int(self.passed)]


def _le(prop, inst, measured, bound) -> Row:
    return Row(prop, inst, float(measured), float(bound), bool(measured <= bound))


def _subset_violations(a: np.ndarray, b: np.ndarray) -> int:
    return int(np.count_nonzero(a & ~b))


def suite_lattice(seed: int, n: int = 20, config=None) -> list[Row]:
    rows = []
    for i in range(n):
        ins = instances.tiny_instance(seed, i)
        bf = oracles.brute_force(ins.domain, ins.mask0, ins.amplitude, ins.params)
        closed, _ = bf.lattice_closed()
        rows.append(Row("lattice_closed", ins.ident, float(not closed), 0.0, closed))
        scale = max(1.0, abs(bf.min_energy))
        for sel, ref in ((MAX, bf.mask_union()), (MIN, bf.mask_intersection())):
            res = minimize(MinimizeSpec(ins.mask0, ins.amplitude, sel, allow_guard_contact=True), ins.domain, ins.params)
            rows.append(_le(f"{sel}_energy_gap", ins.ident, abs(res.breakdown.total_E - bf.min_energy), 1e-10 * scale))
            rows.append(_le(f"{sel}_mask_mismatch", ins.ident, int(np.count_nonzero(res.profile.mask ^ ref)), 0))
    return rows


def comparison_pair(seed: int, i: int):
    """Instance i with amplitudes a <= b; every fifth pair has a == b."""
    ins = instances.tiny_instance(seed, i)
    rng = instances.rng_for(seed, 100_000 + i)
    a = ins.amplitude
    b = a if i % 5 == 0 else a * float(rng.uniform(1.001, 1.5))
    return ins, a, b


def comparison_rows(ins, a: float, b: float) -> list[Row]:
    masks = {}
    for amp, tag in ((a, "a"), (b, "b")):
        for sel in (MAX, MIN):
            masks[tag, sel] = minimize(MinimizeSpec(ins.mask0, amp, sel, allow_guard_contact=True),
                                       ins.domain, ins.params).profile.mask
    rows = [
        _le("min_a_subset_min_b", ins.ident, _subset_violations(masks["a", MIN], masks["b", MIN]), 0),
        _le("max_a_subset_max_b", ins.ident, _subset_violations(masks["a", MAX], masks["b", MAX]), 0),
    ]
    if b > a:
        rows.append(_le("max_a_subset_min_b", ins.ident, _subset_violations(masks["a", MAX], masks["b", MIN]), 0))
    return rows


def suite_comparison(seed: int, n: int = 20, config=None) -> list[Row]:
    rows = []
    for i in range(n):
        rows.extend(comparison_rows(*comparison_pair(seed, i)))
    return rows


def refinement_rows(sc, a0: float, a1: float, n_coarse: int, n_fine: int) -> list[Row]:
    coarse = run_segment(sc.domain, sc.params, sc.initial, a0, a1, n_coarse)
    fine = run_segment(sc.domain, sc.params, sc.initial, a0, a1, n_fine)
    mc, mf = coarse.entries[-1].profile.mask, fine.entries[-1].profile.mask
    jc, jf = coarse.entries[-1].J, fine.entries[-1].J
    return [
        _le("final_mask_cells_differing", sc.name, int(np.count_nonzero(mc ^ mf)), 0),
        _le("final_J_gap", sc.name, abs(jc - jf), 1e-8 * max(1.0, abs(jf))),
    ]


def suite_refinement(seed: int, n: int = 0, config=None) -> list[Row]:
    rows = refinement_rows(scenarios.radial(h=1 / 8, half_box=4.0, amplitude=1.0, stable=True), 1.0, 2.0, 4, 16)
    sc1 = scenarios.hysteresis_loop_1d(h=1 / 128)
    rows += refinement_rows(sc1, 1.0, 1.3, 4, 16)
    return rows


def edi_rows(trace, name: str, rel_tol: float = 1e-8) -> list[Row]:
    rep = dissipation_ledger_check(trace, rel_tol)
    return [
        Row("edi_worst_step_slack", name, rep.worst_slack, -rep.tol, rep.worst_slack >= -rep.tol),
        Row("edi_summed_slack", name, rep.total_slack, -rep.tol, rep.total_slack >= -rep.tol),
        Row("edi_C_empirical", name, rep.C_empirical, rep.C_bound, rep.C_empirical <= rep.C_bound + rep.tol),
        Row("mask_total_variation", name, rep.total_variation, np.inf, np.isfinite(rep.total_variation)),
    ]


def suite_edi(seed: int, n: int = 0, config=None) -> list[Row]:
    if config is not None and config.schedule is not None:
        d = config.build_domain()
        init = stable_initial(d, config.params, config.initial_mask(d), config.schedule.amplitudes[0],
                              selection=config.schedule.selection(0))
        tree = run_piecewise(init, config.schedule, config.partition, config.params, branch_policy="no-jump",
                             tol_lin=config.tolerances.tol_lin, tol_E=config.tolerances.tol_E)
        return edi_rows(branch_ledger(tree, "r"), "config", config.tolerances.tol_EDI)
    sc = scenarios.hysteresis_loop_1d(h=1 / 128, da=0.02)
    tree = run_piecewise(sc.initial, sc.schedule, PartitionSpec(1.0), sc.params, branch_policy="no-jump")
    return edi_rows(branch_ledger(tree, "r"), sc.name)


def branching_rows(sc, peak: float, a_start: float, da: float, a_end: float) -> list[Row]:
    n_up = int(round((peak - a_start) / da))
    n_down = int(round((peak - a_end) / da))
    sched = ForcingSchedule((0.0, float(n_up), float(n_up + n_down)), (a_start, peak, a_end))
    tree = run_piecewise(sc.initial, sched, PartitionSpec(1.0), sc.params, branch_policy=BOTH)
    leaves = tree.leaves()
    rows = [Row("branch_count", sc.name, len(leaves), 2, len(leaves) == 2)]
    if len(leaves) != 2:
        return rows
    jmp = branch_ledger(tree, "r.J").entries
    nj = branch_ledger(tree, "r.N").entries
    k = n_up
    rows.append(Row("masks_differ_after_t1", sc.name, int(np.count_nonzero(jmp[k + 1].profile.mask ^ nj[k + 1].profile.mask)),
                    1, bool(np.any(jmp[k + 1].profile.mask ^ nj[k + 1].profile.mask))))
    rows.append(_le("jump_right_continuous", sc.name, int(np.count_nonzero(jmp[k + 1].profile.mask ^ jmp[k].profile.mask)), 0))
    rows.append(_le("no_jump_left_limit", sc.name, int(np.count_nonzero(nj[k].profile.mask ^ nj[k - 1].profile.mask)), 0))
    return rows


def suite_branching(seed: int, n: int = 0, config=None) -> list[Row]:
    sc = scenarios.two_sided_1d(h=1 / 64)
    return branching_rows(sc, 0.56, 0.3, 0.01, 0.4)


def suite_oracle(seed: int, n: int = 0, config=None) -> list[Row]:
    p = scenarios.STANDARD
    rows = []
    from .grid import build_interval_domain

    h = 1 / 256
    d = build_interval_domain(2.0, h)
    res = minimize(MinimizeSpec(d.dirichlet.copy(), 1.0), d, p)
    s = scenarios.free_boundary_position_1d(res.profile)
    rows.append(_le("1d_position_error", "F=1", abs(s - oracles.oracle_1d(1.0, 0.0, p).s_star), 2 * h))
    sc = scenarios.radial(h=1 / 16, half_box=4.0)
    res = minimize(MinimizeSpec(sc.domain.dirichlet.copy(), 2.0), sc.domain, p)
    rho = oracles.oracle_radial(2.0, 1.0, 1.0, p).rho_star
    rows.append(_le("radial_radius_error", "F=2", abs(scenarios.mean_radius(res.profile) - rho), 2 / 16))
    rep = slope_report(res, p)
    rows.append(_le("radial_slope_sq_error", "F=2", abs(rep.mean_slope_sq - p.q_advancing), 0.15))
    return rows


_RUNNERS = {
    "lattice": suite_lattice,
    "comparison": suite_comparison,
    "refinement": suite_refinement,
    "edi": suite_edi,
    "branching": suite_branching,
    "oracle": suite_oracle,
}


def verify(suite: str, seed: int = 1, config=None, n: int | None = None) -> tuple[bool, list[Row]]:
    """Run one suite (or ``"all"``); returns overall pass flag and report rows."""
    if suite == "all":
        names = list(SUITES)
    elif suite in _RUNNERS:
        names = [suite]
    else:
        raise UnknownSuite(f"unknown suite {suite!r}; expected one of {', '.join(SUITES + ('all',))}")
    rows = []
    for name in names:
        kw = {"config": config}
        if n is not None:
            kw["n"] = n
        rows.extend(_RUNNERS[name](seed, **kw))
    return all(r.passed for r in rows), rows
