"""Time stepping over piecewise monotone forcing, jumps, branching and the
energy-dissipation ledger."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .energy import EnergyBreakdown, HysteresisParams, Profile, augmented_energy, dissipation, field_dirichlet_energy
from .grid import GridDomain
from .solver import MAX, MIN, MinimizeResult, MinimizeSpec, energy_of_mask, minimize

NO_JUMP = "no-jump"
JUMP = "jump"
BOTH = "both"
BRANCH_POLICIES = (NO_JUMP, JUMP, BOTH)
MAX_BRANCHES = 8


class ScheduleError(ValueError):
    pass


class InvariantFault(RuntimeError):
    pass


class BranchExplosion(RuntimeError):
    pass


class PropertyFailure(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# forcing and partitions


@dataclass(frozen=True)
class ForcingSchedule:
    """Piecewise linear amplitude a(t) through ``(times[i], amplitudes[i])``.

    Each piece is strictly monotone. The spatial shape lives on the domain.
    """

    times: tuple
    amplitudes: tuple
    eps0: float = 1e-6

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        a = np.asarray(self.amplitudes, dtype=float)
        object.__setattr__(self, "times", tuple(float(v) for v in t))
        object.__setattr__(self, "amplitudes", tuple(float(v) for v in a))
        if t.ndim != 1 or t.size < 2 or t.size != a.size:
            raise ScheduleError("schedule needs at least two (time, amplitude) samples")
        if np.any(np.diff(t) <= 0):
            raise ScheduleError("breakpoint times must be strictly increasing")
        if np.any(np.diff(a) == 0):
            raise ScheduleError("strict monotonicity: amplitude constant on a segment")
        if self.eps0 <= 0:
            raise ScheduleError("eps0 must be positive")
        if a.min() < self.eps0:
            # phi >= 1 on every domain, so a >= eps0 is the binding condition
            raise ScheduleError(f"assumption(iii): forcing floor, min amplitude {a.min():g} < eps0 = {self.eps0:g}")

    @property
    def n_segments(self) -> int:
        return len(self.times) - 1

    def amplitude(self, t: float) -> float:
        return float(np.interp(t, self.times, self.amplitudes))

    def direction(self, seg: int) -> int:
        return 1 if self.amplitudes[seg + 1] > self.amplitudes[seg] else -1

    def selection(self, seg: int) -> str:
        """MAX on increasing segments, MIN on decreasing ones."""
        return MAX if self.direction(seg) > 0 else MIN

    def monotonicity_changes(self) -> list[int]:
        """Indices i of breakpoints times[i] where the direction flips."""
        return [i for i in range(1, self.n_segments) if self.direction(i - 1) != self.direction(i)]

    def to_dict(self) -> dict:
        return {"times": list(self.times), "amplitudes": list(self.amplitudes), "eps0": self.eps0}


@dataclass(frozen=True)
class PartitionSpec:
    """Uniform-in-segment partition of fineness at most ``delta``."""

    delta: float
    mandatory: tuple = ()
    refinement: int = 2

    def __post_init__(self):
        if not self.delta > 0:
            raise ScheduleError("partition fineness delta must be positive")
        if self.refinement < 2:
            raise ScheduleError("refinement factor must be at least 2")
        object.__setattr__(self, "mandatory", tuple(float(v) for v in self.mandatory))

    def times(self, schedule: ForcingSchedule) -> np.ndarray:
        pts = list(schedule.times) + [t for t in self.mandatory if schedule.times[0] <= t <= schedule.times[-1]]
        pts = np.unique(np.asarray(pts, dtype=float))
        out = [pts[0]]
        for lo, hi in zip(pts[:-1], pts[1:]):
            n = max(1, math.ceil((hi - lo) / self.delta - 1e-9))
            out.extend(lo + (hi - lo) * np.arange(1, n + 1) / n)
        out = np.asarray(out)
        out[-1] = pts[-1]
        return out

    def refined(self) -> "PartitionSpec":
        return PartitionSpec(self.delta / self.refinement, self.mandatory, self.refinement)

    def to_dict(self) -> dict:
        return {"delta": self.delta, "mandatory": list(self.mandatory), "refinement": self.refinement}


def segment_times(schedule: ForcingSchedule, partition: PartitionSpec, seg: int) -> np.ndarray:
    """Partition times in the closed segment ``[times[seg], times[seg+1]]``."""
    ts = partition.times(schedule)
    lo, hi = schedule.times[seg], schedule.times[seg + 1]
    return ts[(ts >= lo - 1e-12) & (ts <= hi + 1e-12)]


# ---------------------------------------------------------------------------
# ledger


@dataclass(frozen=True)
class LedgerEntry:
    J_before: float
    J_after: float
    flux: float
    diss: float
    d_amp: float
    C_bound: float

    @property
    def slack(self) -> float:
        """J_before - J_after + flux + C*da^2 - Diss; nonnegative for exact minimizers."""
        return self.J_before - self.J_after + self.flux + self.C_bound * self.d_amp**2 - self.diss

    @property
    def C_needed(self) -> float:
        """Smallest C making this step's inequality hold."""
        if self.d_amp == 0:
            return 0.0
        return max(0.0, (self.diss - (self.J_before - self.J_after) - self.flux) / self.d_amp**2)


def _bilinear(domain: GridDomain, u: np.ndarray, v: np.ndarray) -> float:
    act = domain.active
    total = 0.0
    for lo, hi in domain.edges():
        both = act[lo] & act[hi]
        total += float(np.dot((u[hi] - u[lo])[both], (v[hi] - v[lo])[both]))
    return total * domain.h ** (domain.dim - 2)


def flux_term(profile: Profile, d_amp: float) -> float:
    """2*da * sum over DIRICHLET cells of phi times the discrete outward normal derivative."""
    d = profile.domain
    psi = np.where(d.dirichlet, d.phi, 0.0)
    return 2.0 * d_amp * _bilinear(d, profile.u, psi)


def boundary_constant(domain: GridDomain) -> float:
    """D[phi on DIRICHLET cells, 0 elsewhere]: the exact O(da^2) constant."""
    return field_dirichlet_energy(domain, np.where(domain.dirichlet, domain.phi, 0.0))


@dataclass
class EnergyLedger:
    entries: list = field(default_factory=list)

    def append(self, before: Profile, after: Profile, d_amp: float, params: HysteresisParams,
               J_before: float, J_after: float) -> LedgerEntry:
        e = LedgerEntry(
            J_before=J_before,
            J_after=J_after,
            flux=flux_term(before, d_amp),
            diss=dissipation(before.mask, after.mask, params, domain=before.domain),
            d_amp=d_amp,
            C_bound=boundary_constant(before.domain),
        )
        self.entries.append(e)
        return e


# ---------------------------------------------------------------------------
# traces


@dataclass(frozen=True, eq=False)
class TraceEntry:
    t: float
    amplitude: float
    profile: Profile
    breakdown: EnergyBreakdown
    step_diss: float
    flux: float
    jump_flag: bool
    selection: str
    certified: bool = True

    @property
    def J(self) -> float:
        return self.breakdown.total_J

    @property
    def D(self) -> float:
        return self.breakdown.dirichlet

    @property
    def volume(self) -> float:
        return self.breakdown.volume


TRACE_COLUMNS = ["t", "amplitude", "volume", "J", "D", "step_diss", "flux", "jump_flag"]


@dataclass
class Trace:
    domain: GridDomain
    params: HysteresisParams
    entries: list = field(default_factory=list)
    ledger: EnergyLedger = field(default_factory=EnergyLedger)
    tol_lin: float = 1e-10
    tol_E: float = 1e-10

    def rows(self) -> list[list]:
        return [[e.t, e.amplitude, e.volume, e.J, e.D, e.step_diss, e.flux, int(e.jump_flag)]
                for e in self.entries]

    @property
    def masks(self) -> list[np.ndarray]:
        return [e.profile.mask for e in self.entries]


def jump_threshold(mask: np.ndarray) -> int:
    return max(4, math.ceil(0.01 * int(np.count_nonzero(mask))))


def _is_jump(before: np.ndarray, after: np.ndarray) -> bool:
    return int(np.count_nonzero(before ^ after)) > jump_threshold(after)


def initial_entry(profile: Profile, t: float, amplitude: float, params: HysteresisParams,
                  selection: str = MAX) -> TraceEntry:
    bd = augmented_energy(profile.mask, profile, params)
    return TraceEntry(t, amplitude, profile, bd, 0.0, 0.0, False, selection)


def stable_initial(domain: GridDomain, params: HysteresisParams, mask0: np.ndarray, amplitude: float,
                   selection: str = MAX, **kw) -> Profile:
    """Minimizer from ``mask0`` at the starting amplitude, a globally stable initial state."""
    return minimize(MinimizeSpec(mask0=np.asarray(mask0, dtype=bool) | domain.dirichlet,
                                 amplitude=amplitude, selection=selection, **kw), domain, params).profile


def step(state: Profile, amplitude_next: float, selection: str, params: HysteresisParams,
         tol_lin: float = 1e-10, tol_E: float = 1e-10, **kw) -> MinimizeResult:
    """One minimizing-movement step from the mask of ``state``."""
    spec = MinimizeSpec(mask0=state.mask, amplitude=amplitude_next, selection=selection,
                        tol_lin=tol_lin, tol_E=tol_E, **kw)
    return minimize(spec, state.domain, params)


def _advance(trace: Trace, t: float, amplitude: float, selection: str, result_profile: Profile,
             certified: bool = True) -> TraceEntry:
    prev = trace.entries[-1]
    before = prev.profile
    bd = augmented_energy(before.mask, result_profile, trace.params)
    led = trace.ledger.append(before, result_profile, amplitude - prev.amplitude, trace.params,
                              prev.J, bd.total_J)
    entry = TraceEntry(
        t=t,
        amplitude=amplitude,
        profile=result_profile,
        breakdown=bd,
        step_diss=led.diss,
        flux=led.flux,
        jump_flag=_is_jump(before.mask, result_profile.mask),
        selection=selection,
        certified=certified,
    )
    trace.entries.append(entry)
    return entry


def run_monotone(trace: Trace, times, amplitudes, selection: str, check_monotone: bool = True,
                 **kw) -> Trace:
    """Extend ``trace`` by minimizing-movement steps at the given times.

    The amplitudes must be monotone (or constant); masks must follow.
    """
    amplitudes = np.asarray(amplitudes, dtype=float)
    diffs = np.diff(np.concatenate([[trace.entries[-1].amplitude], amplitudes]))
    direction = 1 if np.all(diffs >= 0) and np.any(diffs > 0) else (-1 if np.all(diffs <= 0) and np.any(diffs < 0) else 0)
    if direction == 0 and np.any(diffs != 0):
        raise ScheduleError("strict monotonicity: segment amplitudes are not monotone")
    for t, a in zip(times, amplitudes):
        prev = trace.entries[-1]
        if a == prev.amplitude:
            # the current state is in the argmin of its own augmented energy
            trace.entries.append(TraceEntry(float(t), float(a), prev.profile, prev.breakdown, 0.0, 0.0,
                                            False, selection))
            trace.ledger.append(prev.profile, prev.profile, 0.0, trace.params, prev.J, prev.J)
            continue
        res = step(prev.profile, float(a), selection, trace.params, trace.tol_lin, trace.tol_E, **kw)
        new = res.profile
        if check_monotone:
            if direction > 0 and np.any(prev.profile.mask & ~new.mask):
                raise InvariantFault(f"mask shrank at t={t:g} under increasing forcing")
            if direction < 0 and np.any(new.mask & ~prev.profile.mask):
                raise InvariantFault(f"mask grew at t={t:g} under decreasing forcing")
        _advance(trace, float(t), float(a), selection, new, res.certificate.passed)
    return trace


def run_segment(domain: GridDomain, params: HysteresisParams, initial: Profile, a_start: float, a_end: float,
                n_steps: int, selection: str | None = None, t0: float = 0.0, t1: float = 1.0, **kw) -> Trace:
    """Uniform monotone sweep a_start -> a_end in ``n_steps`` steps."""
    if selection is None:
        selection = MAX if a_end >= a_start else MIN
    trace = Trace(domain, params)
    trace.entries.append(initial_entry(initial, t0, a_start, params, selection))
    times = t0 + (t1 - t0) * np.arange(1, n_steps + 1) / n_steps
    amps = a_start + (a_end - a_start) * np.arange(1, n_steps + 1) / n_steps
    amps[-1] = a_end
    return run_monotone(trace, times, amps, selection, **kw)


# ---------------------------------------------------------------------------
# jumps


@dataclass(frozen=True, eq=False)
class JumpEvent:
    t_lo: float
    t_hi: float
    a_lo: float
    a_hi: float
    mask_minus: np.ndarray
    mask_plus: np.ndarray
    step_index: int

    @property
    def t_mid(self) -> float:
        return 0.5 * (self.t_lo + self.t_hi)

    @property
    def cells_changed(self) -> int:
        return int(np.count_nonzero(self.mask_minus ^ self.mask_plus))


def detect_jumps(trace: Trace, refinement_levels: int = 1, **kw) -> list[JumpEvent]:
    """Flagged steps whose jump persists after halving the step ``refinement_levels`` times."""
    events = []
    for k in range(1, len(trace.entries)):
        prev, cur = trace.entries[k - 1], trace.entries[k]
        if not cur.jump_flag:
            continue
        sub = Trace(trace.domain, trace.params, tol_lin=trace.tol_lin, tol_E=trace.tol_E)
        sub.entries.append(prev)
        n = 2**refinement_levels
        frac = np.arange(1, n + 1) / n
        run_monotone(sub, prev.t + (cur.t - prev.t) * frac, prev.amplitude + (cur.amplitude - prev.amplitude) * frac,
                     cur.selection, check_monotone=False, **kw)
        for j in range(1, len(sub.entries)):
            if sub.entries[j].jump_flag:
                a, b = sub.entries[j - 1], sub.entries[j]
                events.append(JumpEvent(a.t, b.t, a.amplitude, b.amplitude, a.profile.mask, b.profile.mask, k))
                break
    return events


# ---------------------------------------------------------------------------
# dissipation inequality


@dataclass
class EDIReport:
    slacks: np.ndarray
    C_needed: np.ndarray
    C_bound: float
    tol: float
    total_slack: float
    total_variation: float
    energy_scale: float

    @property
    def passed(self) -> bool:
        return bool(np.all(self.slacks >= -self.tol)) and self.total_slack >= -self.tol * max(1, len(self.slacks))

    @property
    def worst_slack(self) -> float:
        return float(self.slacks.min()) if len(self.slacks) else 0.0

    @property
    def C_empirical(self) -> float:
        return float(self.C_needed.max()) if len(self.C_needed) else 0.0


def dissipation_ledger_check(trace: Trace, rel_tol: float = 1e-8) -> EDIReport:
    """Per-step and summed discrete energy dissipation inequality."""
    entries = trace.ledger.entries
    slacks = np.array([e.slack for e in entries])
    needed = np.array([e.C_needed for e in entries])
    scale = max([1.0] + [abs(e.J) for e in trace.entries])
    tol = rel_tol * scale
    tv = 0.0
    for a, b in zip(trace.entries[:-1], trace.entries[1:]):
        tv += int(np.count_nonzero((a.profile.mask ^ b.profile.mask) & trace.domain.interior)) * trace.domain.cell_measure
    total = float(slacks.sum()) if len(slacks) else 0.0
    return EDIReport(slacks, needed, boundary_constant(trace.domain), tol, total, tv, scale)


# ---------------------------------------------------------------------------
# branching


@dataclass
class BranchNode:
    id: str
    parent: str | None
    spawn_time: float | None
    decision: str | None
    trace: Trace
    selections: list = field(default_factory=list)
    decisions: list = field(default_factory=list)
    children: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"id": self.id, "parent": self.parent, "spawn_time": self.spawn_time,
                "decision": self.decision, "children": list(self.children)}


@dataclass
class BranchTree:
    nodes: dict = field(default_factory=dict)
    root: str = "r"

    def leaves(self) -> list[BranchNode]:
        return [n for n in self.nodes.values() if not n.children]

    def to_list(self) -> list[dict]:
        return [self.nodes[k].to_dict() for k in sorted(self.nodes)]

    def full_trace(self, node_id: str) -> list[TraceEntry]:
        """Trace entries from the root to ``node_id``."""
        chain = []
        nid = node_id
        while nid is not None:
            node = self.nodes[nid]
            chain.append(node)
            nid = node.parent
        out: list[TraceEntry] = []
        for node in reversed(chain):
            out.extend(node.trace.entries if not out else node.trace.entries[1:])
        return out


def _jump_persists(trace: Trace, before: TraceEntry, last: TraceEntry, levels: int, **kw) -> bool:
    if levels <= 0:
        return True
    sub = Trace(trace.domain, trace.params, tol_lin=trace.tol_lin, tol_E=trace.tol_E)
    sub.entries.append(before)
    frac = np.arange(1, 2**levels + 1) / 2**levels
    run_monotone(sub, before.t + (last.t - before.t) * frac,
                 before.amplitude + (last.amplitude - before.amplitude) * frac,
                 last.selection, check_monotone=False, **kw)
    return any(e.jump_flag for e in sub.entries[1:])


def _child_trace(parent: Trace, start: TraceEntry) -> Trace:
    tr = Trace(parent.domain, parent.params, tol_lin=parent.tol_lin, tol_E=parent.tol_E)
    tr.entries.append(start)
    return tr


def run_piecewise(initial: Profile, schedule: ForcingSchedule, partition: PartitionSpec, params: HysteresisParams,
                  branch_policy: str = BOTH, max_branches: int = MAX_BRANCHES, tol_lin: float = 1e-10,
                  tol_E: float = 1e-10, confirm_levels: int = 2, **kw) -> BranchTree:
    """Evolve through every segment; at monotonicity changes optionally branch.

    At a breakpoint the last step of the ending segment is replayed both ways:
    the no-jump candidate keeps the mask held before that step (the left
    limit, re-solved at the breakpoint amplitude); the jump candidate is the
    minimizer the segment produced. They branch only when the final step was
    a jump that survives ``confirm_levels`` halvings of the step; steady
    front motion spreads over the substeps and does not.
    """
    if branch_policy not in BRANCH_POLICIES:
        raise ValueError(f"branch policy must be one of {BRANCH_POLICIES}")
    domain = initial.domain
    changes = set(schedule.monotonicity_changes())
    root_trace = Trace(domain, params, tol_lin=tol_lin, tol_E=tol_E)
    root_trace.entries.append(initial_entry(initial, schedule.times[0], schedule.amplitudes[0], params,
                                            schedule.selection(0)))
    tree = BranchTree()
    tree.nodes["r"] = BranchNode("r", None, None, None, root_trace)
    active = ["r"]
    for seg in range(schedule.n_segments):
        ts = segment_times(schedule, partition, seg)[1:]
        amps = np.array([schedule.amplitude(t) for t in ts])
        sel = schedule.selection(seg)
        branching_here = (seg + 1) in changes
        next_active = []
        for nid in active:
            node = tree.nodes[nid]
            node.selections.append(sel)
            run_monotone(node.trace, ts, amps, sel, **kw)
            if not branching_here:
                next_active.append(nid)
                continue
            last = node.trace.entries[-1]
            before = node.trace.entries[-2]
            if not (last.jump_flag and _jump_persists(node.trace, before, last, confirm_levels, **kw)):
                next_active.append(nid)
                continue
            # no-jump candidate: mask before the last step, at the breakpoint amplitude
            prof_no, _ = energy_of_mask(domain, params, before.profile.mask, before.profile.mask, last.amplitude)
            if branch_policy == JUMP:
                node.decisions.append((last.t, JUMP))
                next_active.append(nid)
                continue
            if branch_policy == NO_JUMP:
                node.decisions.append((last.t, NO_JUMP))
                node.trace.entries.pop()
                node.trace.ledger.entries.pop()
                _advance(node.trace, last.t, last.amplitude, sel, prof_no)
                next_active.append(nid)
                continue
            if len(tree.leaves()) + 1 > max_branches:
                raise BranchExplosion(f"more than {max_branches} branches")
            # BOTH: the parent ends just before the breakpoint
            node.trace.entries.pop()
            node.trace.ledger.entries.pop()
            for decision in (JUMP, NO_JUMP):
                cid = f"{nid}.{'J' if decision == JUMP else 'N'}"
                tr = _child_trace(node.trace, before)
                if decision == JUMP:
                    tr.entries.append(last)
                    tr.ledger.append(before.profile, last.profile, last.amplitude - before.amplitude, params,
                                     before.J, last.J)
                else:
                    _advance(tr, last.t, last.amplitude, sel, prof_no)
                child = BranchNode(cid, nid, float(last.t), decision, tr)
                tree.nodes[cid] = child
                node.children.append(cid)
                next_active.append(cid)
        active = next_active
    if len(tree.leaves()) > max_branches:
        raise BranchExplosion(f"more than {max_branches} branches")
    return tree


def branch_entries(tree: BranchTree, node_id: str) -> list[TraceEntry]:
    return tree.full_trace(node_id)


def branch_ledger(tree: BranchTree, node_id: str) -> Trace:
    """Root-to-node trace with the concatenated ledger, for EDI checks."""
    chain = []
    nid = node_id
    while nid is not None:
        chain.append(tree.nodes[nid])
        nid = tree.nodes[nid].parent
    out = Trace(chain[0].trace.domain, chain[0].trace.params)
    for node in reversed(chain):
        out.entries.extend(node.trace.entries if not out.entries else node.trace.entries[1:])
        out.ledger.entries.extend(node.trace.ledger.entries)
    return out


def nested(masks: list[np.ndarray], increasing: bool) -> bool:
    for a, b in zip(masks[:-1], masks[1:]):
        if increasing and np.any(a & ~b):
            return False
        if not increasing and np.any(b & ~a):
            return False
    return True


__all__ = [
    "BOTH", "JUMP", "NO_JUMP", "MAX_BRANCHES", "ForcingSchedule", "PartitionSpec", "Trace", "TraceEntry",
    "EnergyLedger", "LedgerEntry", "BranchNode", "BranchTree", "JumpEvent", "EDIReport", "step", "run_monotone",
    "run_segment", "run_piecewise", "detect_jumps", "dissipation_ledger_check", "stable_initial",
    "initial_entry", "jump_threshold", "flux_term", "boundary_constant", "branch_ledger", "branch_entries",
    "segment_times", "nested", "ScheduleError", "InvariantFault", "BranchExplosion", "Profile",
]
