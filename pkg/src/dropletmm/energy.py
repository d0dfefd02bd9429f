"""Energies, dissipation and lattice operations on wetted profiles.

All volume terms count INTERIOR cells only; the DIRICHLET layer is wetted in
every competitor and would add the same constant to each of them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import GridDomain


class ConsistencyFault(RuntimeError):
    """Two independent evaluations of the same quantity disagree."""


class DomainMismatch(ValueError):
    pass


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class HysteresisParams:
    mu_minus: float
    mu_plus: float

    def __post_init__(self):
        if not 0.0 < self.mu_minus < 1.0:
            raise ValueError("assumption: 0 < μ₋ < 1")
        if not self.mu_plus > 0.0:
            raise ValueError("assumption: 0 < μ₊")

    @property
    def q_receding(self) -> float:
        return 1.0 - self.mu_minus

    @property
    def q_advancing(self) -> float:
        return 1.0 + self.mu_plus


@dataclass(frozen=True, eq=False)
class Profile:
    """Height field ``u`` with its positivity mask on a domain."""

    domain: GridDomain
    u: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        if self.u.shape != self.domain.shape or self.mask.shape != self.domain.shape:
            raise DomainMismatch("profile arrays do not match the domain shape")
        self.u.setflags(write=False)
        self.mask.setflags(write=False)

    @classmethod
    def from_field(cls, domain: GridDomain, u: np.ndarray) -> "Profile":
        u = np.array(u, dtype=float)
        mask = (u > 0) & domain.interior | domain.dirichlet
        u[~mask] = 0.0
        return cls(domain, u, mask)

    @property
    def wet_interior(self) -> np.ndarray:
        return self.mask & self.domain.interior

    @property
    def volume(self) -> float:
        return int(np.count_nonzero(self.wet_interior)) * self.domain.cell_measure

    def check(self) -> list[str]:
        """Return violated invariants (empty when the profile is valid)."""
        d = self.domain
        problems = []
        if np.any(self.u < 0):
            problems.append("negative height")
        if np.any(self.u[~self.mask] != 0):
            problems.append("nonzero height outside mask")
        if np.any(self.mask & d.exterior):
            problems.append("mask covers EXTERIOR cells")
        if not np.all(self.mask[d.dirichlet]):
            problems.append("mask misses DIRICHLET cells")
        if np.any((self.u > 0) != self.mask):
            problems.append("mask differs from {u > 0}")
        if np.any(self.mask & d.guard):
            problems.append("mask intersects guard band")
        return problems


@dataclass(frozen=True)
class EnergyBreakdown:
    dirichlet: float
    volume: float
    total_J: float
    dissipation: float
    total_E: float

    def csv_row(self, t: float) -> list[float]:
        return [t, self.dirichlet, self.volume, self.total_J, self.dissipation, self.total_E]


BREAKDOWN_COLUMNS = ["t", "dirichlet", "volume", "total_J", "dissipation_step", "total_E"]


def _same_domain(*items) -> GridDomain:
    dom = items[0].domain if hasattr(items[0], "domain") else None
    for it in items[1:]:
        if getattr(it, "domain", dom) is not dom:
            raise DomainMismatch("profiles live on different domains")
    return dom


def field_dirichlet_energy(domain: GridDomain, u: np.ndarray) -> float:
    """Sum of ((u_b - u_a)/h)^2 h^d over edges joining non-EXTERIOR cells."""
    active = domain.active
    scale = domain.h ** (domain.dim - 2)
    total = 0.0
    for lo, hi in domain.edges():
        both = active[lo] & active[hi]
        diff = (u[hi] - u[lo])[both]
        total += float(np.dot(diff, diff))
    return total * scale


def dirichlet_energy(p: Profile) -> float:
    return field_dirichlet_energy(p.domain, p.u)


def _interior_counts(domain: GridDomain, mask0: np.ndarray, mask1: np.ndarray) -> tuple[int, int]:
    inter = domain.interior
    advanced = int(np.count_nonzero(mask1 & ~mask0 & inter))
    receded = int(np.count_nonzero(mask0 & ~mask1 & inter))
    return advanced, receded


def dissipation(mask0: np.ndarray, mask1: np.ndarray, params: HysteresisParams,
                domain: GridDomain | None = None, h: float | None = None, dim: int | None = None) -> float:
    """mu_plus * |mask1 minus mask0| + mu_minus * |mask0 minus mask1|, by cell count."""
    mask0 = np.asarray(mask0, dtype=bool)
    mask1 = np.asarray(mask1, dtype=bool)
    if mask0.shape != mask1.shape:
        raise DomainMismatch("masks have different shapes")
    if domain is not None:
        advanced, receded = _interior_counts(domain, mask0, mask1)
        measure = domain.cell_measure
    else:
        advanced = int(np.count_nonzero(mask1 & ~mask0))
        receded = int(np.count_nonzero(mask0 & ~mask1))
        measure = (1.0 if h is None else h) ** (mask0.ndim if dim is None else dim)
    return (params.mu_plus * advanced + params.mu_minus * receded) * measure


def weighted_volume(domain: GridDomain, mask0: np.ndarray, mask: np.ndarray, params: HysteresisParams) -> float:
    inter = domain.interior
    n_in = int(np.count_nonzero(mask & mask0 & inter))
    n_out = int(np.count_nonzero(mask & ~mask0 & inter))
    return (params.q_receding * n_in + params.q_advancing * n_out) * domain.cell_measure


def augmented_energy(mask0: np.ndarray, p: Profile, params: HysteresisParams,
                     rel_tol: float = 1e-12) -> EnergyBreakdown:
    """E[mask0, u] evaluated twice: weighted volume form and J + Diss - mu_minus |mask0|."""
    d = p.domain
    D = dirichlet_energy(p)
    vol = p.volume
    J = D + vol
    diss = dissipation(mask0, p.mask, params, domain=d)
    base = int(np.count_nonzero(mask0 & d.interior)) * d.cell_measure
    e_split = J + diss - params.mu_minus * base
    e_weighted = D + weighted_volume(d, mask0, p.mask, params)
    scale = max(abs(e_weighted), abs(e_split), 1e-300)
    if abs(e_weighted - e_split) > rel_tol * scale + 1e-15:
        raise ConsistencyFault(
            f"energy forms disagree: weighted {e_weighted!r} vs J+Diss {e_split!r}"
        )
    return EnergyBreakdown(dirichlet=D, volume=vol, total_J=J, dissipation=diss, total_E=e_weighted)


def lattice_min(p: Profile, q: Profile) -> Profile:
    _same_domain(p, q)
    return Profile(p.domain, np.minimum(p.u, q.u), p.mask & q.mask)


def lattice_max(p: Profile, q: Profile) -> Profile:
    _same_domain(p, q)
    return Profile(p.domain, np.maximum(p.u, q.u), p.mask | q.mask)


def crossing_edges(p: Profile, q: Profile) -> int:
    """Edges on which p - q changes strict sign; only these make D submodular-strict."""
    d = p.domain
    act = d.active
    diff = p.u - q.u
    n = 0
    for lo, hi in d.edges():
        both = act[lo] & act[hi]
        n += int(np.count_nonzero(both & (diff[lo] * diff[hi] < 0)))
    return n


@dataclass(frozen=True)
class MinMaxReport:
    diss_lhs: float
    diss_rhs: float
    diss_defect: float
    diss_count_defect: int
    energy_lhs: float
    energy_rhs: float
    energy_defect: float
    crossing_edges: int
    ordered: bool


def minmax_identity_report(mask0: np.ndarray, p: Profile, q: Profile, params: HysteresisParams,
                           mask0_q: np.ndarray | None = None) -> MinMaxReport:
    """Both sides of the min-max identities for E and Diss.

    With ``mask0_q`` given, the ordered-initial-condition variant is used:
    E[mask0, p] + E[mask0_q, q] against E[mask0, p∧q] + E[mask0_q, p∨q],
    which requires mask0 ⊆ mask0_q ∩ Ω(p) and mask0_q ⊆ Ω(q).
    """
    d = _same_domain(p, q)
    lo_p = lattice_min(p, q)
    hi_p = lattice_max(p, q)
    ordered = mask0_q is not None
    base_p = np.asarray(mask0, dtype=bool) | d.dirichlet
    base_q = base_p if not ordered else (np.asarray(mask0_q, dtype=bool) | d.dirichlet)
    if ordered:
        inter = d.interior
        if np.any(base_p & ~(base_q & p.mask) & inter):
            raise PreconditionError("ordered identity needs Ω(u₀) ⊆ Ω(v₀) ∩ Ω(u₁)")
        if np.any(base_q & ~q.mask & inter):
            raise PreconditionError("ordered identity needs Ω(v₀) ⊆ Ω(v₁)")

    def counts(m0, m1):
        a, r = _interior_counts(d, m0, m1)
        return a, r

    lhs_counts = [counts(base_p, p.mask), counts(base_q, q.mask)]
    rhs_counts = [counts(base_p, lo_p.mask), counts(base_q, hi_p.mask)]
    adv_def = sum(c[0] for c in lhs_counts) - sum(c[0] for c in rhs_counts)
    rec_def = sum(c[1] for c in lhs_counts) - sum(c[1] for c in rhs_counts)
    count_defect = abs(adv_def) + abs(rec_def)
    dl = dissipation(base_p, p.mask, params, domain=d) + dissipation(base_q, q.mask, params, domain=d)
    dr = dissipation(base_p, lo_p.mask, params, domain=d) + dissipation(base_q, hi_p.mask, params, domain=d)
    el = augmented_energy(base_p, p, params).total_E + augmented_energy(base_q, q, params).total_E
    er = augmented_energy(base_p, lo_p, params).total_E + augmented_energy(base_q, hi_p, params).total_E
    return MinMaxReport(
        diss_lhs=dl,
        diss_rhs=dr,
        diss_defect=(params.mu_plus * adv_def + params.mu_minus * rec_def) * d.cell_measure,
        diss_count_defect=count_defect,
        energy_lhs=el,
        energy_rhs=er,
        energy_defect=el - er,
        crossing_edges=crossing_edges(p, q),
        ordered=ordered,
    )


def relative_gap(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), math.ulp(1.0))
