"""Independent reference solutions: closed forms in 1D and radially, and
exhaustive enumeration on tiny grids."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .energy import HysteresisParams, field_dirichlet_energy
from .grid import GridDomain, dirichlet_values
from . import kernels

PINNED = "PINNED"
ADVANCING = "ADVANCING"
RECEDING = "RECEDING"
JUMP = "JUMP"
NO_JUMP = "NO_JUMP"
MAX_BRUTE_CELLS = 16


@dataclass(frozen=True)
class Oracle1DResult:
    s_star: float
    energy: float
    regime: str


def oracle_1d(F: float, s0: float, params: HysteresisParams) -> Oracle1DResult:
    """Minimizer of F^2/s + weighted wetted length for a one-sided interval."""
    if F <= 0:
        raise ValueError("F must be positive")
    if s0 < 0:
        raise ValueError("s0 must be nonnegative")
    qa = math.sqrt(params.q_advancing)
    qr = math.sqrt(params.q_receding)
    if F > s0 * qa:
        s, regime = F / qa, ADVANCING
    elif F < s0 * qr:
        s, regime = F / qr, RECEDING
    else:
        s, regime = s0, PINNED
    return Oracle1DResult(s, _energy_1d(F, s, s0, params), regime)


def _energy_1d(F, s, s0, params):
    return F * F / s + params.q_receding * min(s, s0) + params.q_advancing * max(s - s0, 0.0)


@dataclass(frozen=True)
class TwoSidedResult:
    left: Oracle1DResult | None
    right: Oracle1DResult | None
    energy_separate: float
    energy_merged: float
    verdict: str
    F_jump: float


def _separate(F, sL0, sR0, length, params):
    left = oracle_1d(F, sL0, params)
    right = oracle_1d(F, sR0, params)
    if left.s_star + right.s_star >= length:
        return left, right, math.inf
    return left, right, left.energy + right.energy


def _merged_energy(sL0, sR0, length, params):
    wet0 = min(sL0 + sR0, length)
    return params.q_receding * wet0 + params.q_advancing * (length - wet0)


def oracle_1d_two_sided(F: float, s_left0: float, s_right0: float, length: float,
                        params: HysteresisParams) -> TwoSidedResult:
    """Two boundary-attached intervals against the fully wetted state.

    Equal boundary values make the merged height constant, so its energy is
    the weighted length alone. ``F_jump`` is the amplitude where the two
    energies cross (or where the separate intervals would meet).
    """
    if s_left0 + s_right0 > length + 1e-15:
        raise ValueError("s_left0 + s_right0 must not exceed length")
    e_merged = _merged_energy(s_left0, s_right0, length, params)
    if s_left0 + s_right0 >= length - 1e-15:
        return TwoSidedResult(None, None, math.inf, e_merged, JUMP, 0.0)
    left, right, e_sep = _separate(F, s_left0, s_right0, length, params)
    verdict = JUMP if e_merged < e_sep else NO_JUMP
    return TwoSidedResult(left, right, e_sep, e_merged, verdict,
                          _jump_amplitude(s_left0, s_right0, length, params))


def _jump_amplitude(sL0, sR0, length, params) -> float:
    e_merged = _merged_energy(sL0, sR0, length, params)

    def gap(F):
        return _separate(F, sL0, sR0, length, params)[2] - e_merged

    # wetted lengths grow with F; past F_meet the separate state does not exist
    lo, hi = 0.0, 2.0 * length * math.sqrt(params.q_advancing)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if math.isfinite(gap(mid)):
            lo = mid
        else:
            hi = mid
    f_meet = lo
    tiny = 1e-12 * f_meet
    if gap(f_meet) < 0:
        return f_meet
    if gap(tiny) > 0:
        return tiny
    return optimize.brentq(gap, tiny, f_meet, xtol=1e-14, rtol=1e-14)


@dataclass(frozen=True)
class RadialResult:
    rho_star: float
    energy: float
    regime: str


def _radial_root(F, r0, q):
    target = F / math.sqrt(q)

    def f(rho):
        return rho * math.log(rho / r0) - target

    hi = 2.0 * r0
    while f(hi) < 0:
        hi *= 2.0
    a, b = r0, hi
    while b - a > 1e-12 * max(1.0, b):
        m = 0.5 * (a + b)
        if f(m) < 0:
            a = m
        else:
            b = m
    return 0.5 * (a + b)


def oracle_radial(F: float, r0: float, rho0: float, params: HysteresisParams) -> RadialResult:
    """Annular droplet around a disk of radius r0 with boundary value F."""
    if F <= 0 or r0 <= 0 or rho0 < r0:
        raise ValueError("need F > 0 and rho0 >= r0 > 0")
    log0 = math.log(rho0 / r0)
    slope = math.inf if log0 == 0 else F / (rho0 * log0)
    if slope > math.sqrt(params.q_advancing):
        rho, regime = _radial_root(F, r0, params.q_advancing), ADVANCING
    elif slope < math.sqrt(params.q_receding):
        rho, regime = _radial_root(F, r0, params.q_receding), RECEDING
    else:
        rho, regime = rho0, PINNED
    dirichlet = 2.0 * math.pi * F * F / math.log(rho / r0)
    inside = math.pi * (min(rho, rho0) ** 2 - r0**2)
    outside = math.pi * max(rho**2 - rho0**2, 0.0)
    energy = dirichlet + params.q_receding * inside + params.q_advancing * outside
    return RadialResult(rho, energy, regime)


# ---------------------------------------------------------------------------
# exhaustive enumeration


class TooManyCells(ValueError):
    pass


@dataclass
class BruteForceResult:
    argmin_masks: list = field(repr=False)
    min_energy: float = math.inf
    count: int = 0
    energies: np.ndarray = field(default=None, repr=False)
    cells: np.ndarray = field(default=None, repr=False)
    backend: str = ""

    def mask_union(self) -> np.ndarray:
        out = self.argmin_masks[0].copy()
        for m in self.argmin_masks[1:]:
            out |= m
        return out

    def mask_intersection(self) -> np.ndarray:
        out = self.argmin_masks[0].copy()
        for m in self.argmin_masks[1:]:
            out &= m
        return out

    def lattice_closed(self) -> tuple[bool, str]:
        """Union and intersection of every pair of minimizers are minimizers."""
        keys = {m.tobytes() for m in self.argmin_masks}
        for i, a in enumerate(self.argmin_masks):
            for b in self.argmin_masks[i + 1:]:
                for combo, name in ((a | b, "union"), (a & b, "intersection")):
                    if combo.tobytes() not in keys:
                        return False, (f"{name} of minimizers {np.flatnonzero(a).tolist()} and "
                                       f"{np.flatnonzero(b).tolist()} is not a minimizer")
        return True, ""


def reduced_problem(domain: GridDomain, mask0: np.ndarray, amplitude: float, params: HysteresisParams):
    """Arrays describing E on the flippable cells, for the enumeration kernels."""
    cells = np.argwhere(domain.flippable)
    n = len(cells)
    if n > MAX_BRUTE_CELLS:
        raise TooManyCells(f"{n} flippable cells exceed the limit of {MAX_BRUTE_CELLS}")
    g = dirichlet_values(domain, amplitude)
    pos = np.full(domain.shape, -1, dtype=np.int64)
    pos[tuple(cells.T)] = np.arange(n)
    nbr = np.full((n, 2 * domain.dim), -1, dtype=np.int32)
    dir_vals = np.full((n, 2 * domain.dim), np.nan)
    zero_nbrs = np.zeros(n)
    k = 0
    for axis in range(domain.dim):
        for step in (-1, 1):
            nb = cells.copy()
            nb[:, axis] += step
            inside = (nb[:, axis] >= 0) & (nb[:, axis] < domain.shape[axis])
            t = tuple(np.clip(nb, 0, np.array(domain.shape) - 1).T)
            act = inside & domain.active[t]
            is_dir = act & domain.dirichlet[t]
            is_flip = act & (pos[t] >= 0)
            nbr[is_flip, k] = pos[t][is_flip]
            dir_vals[is_dir, k] = g[t][is_dir]
            zero_nbrs += act & ~is_dir & ~is_flip
            k += 1
    mask0 = np.asarray(mask0, dtype=bool)
    q = np.where(mask0[tuple(cells.T)], params.q_receding, params.q_advancing)
    weight = q * domain.cell_measure
    c_h = domain.h ** (domain.dim - 2)
    # Dirichlet energy with every flippable cell dry, per unit c_h
    const = field_dirichlet_energy(domain, g) / c_h
    return cells, nbr, dir_vals, zero_nbrs, weight, c_h, const


def brute_force(domain: GridDomain, mask0: np.ndarray, amplitude: float, params: HysteresisParams,
                tol_E: float = 1e-10, backend: str | None = None) -> BruteForceResult:
    """Global minimizers of E[mask0, .] by enumerating every wetted set.

    Sets containing pockets that do not touch a DIRICHLET cell are skipped;
    the same height field is represented by the set without the pocket.
    """
    cells, nbr, dir_vals, zero_nbrs, weight, c_h, const = reduced_problem(domain, mask0, amplitude, params)
    impl = kernels.brute_force_energies if backend is None else kernels.get_backend(backend).brute_force_energies
    energies = np.asarray(impl(nbr, dir_vals, zero_nbrs, weight, c_h, const))
    finite = np.isfinite(energies)
    e_min = float(energies[finite].min())
    tol = tol_E * max(1.0, abs(e_min))
    winners = np.flatnonzero(finite & (energies <= e_min + tol))
    masks = []
    for code in winners:
        m = domain.dirichlet.copy()
        bits = (int(code) >> np.arange(len(cells))) & 1
        m[tuple(cells[bits.astype(bool)].T)] = True
        masks.append(m)
    return BruteForceResult(
        argmin_masks=masks,
        min_energy=e_min,
        count=int(finite.sum()),
        energies=energies,
        cells=cells,
        backend=kernels.BACKEND if backend is None else backend,
    )
