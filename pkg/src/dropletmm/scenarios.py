"""Reference scenarios shared by the verify suites, the CLI and the tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .energy import HysteresisParams, Profile
from .evolution import ForcingSchedule, stable_initial
from .grid import GridDomain, build_disk_complement_domain, build_interval_domain
from .solver import energy_of_mask

STANDARD = HysteresisParams(mu_minus=0.36, mu_plus=0.21)


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    domain: GridDomain
    params: HysteresisParams
    initial: Profile
    schedule: ForcingSchedule | None = None


def distance_mask(domain: GridDomain, r: float) -> np.ndarray:
    """DIRICHLET cells plus flippable cells within distance r of them."""
    dist = ndimage.distance_transform_edt(~domain.dirichlet, sampling=domain.h)
    return domain.dirichlet | (domain.flippable & (dist <= r + 1e-9 * domain.h))


def pinned_profile(domain: GridDomain, params: HysteresisParams, mask: np.ndarray, amplitude: float) -> Profile:
    profile, _ = energy_of_mask(domain, params, mask, mask, amplitude)
    return profile


def hysteresis_loop_1d(h: float = 1 / 512, da: float = 0.01, params: HysteresisParams = STANDARD,
                       length: float = 2.0) -> Scenario:
    """s0 = 1 at a = 1, then a: 1 -> 1.3 -> 0.6 -> 1.0 in steps of ``da``."""
    d = build_interval_domain(length, h)
    init = pinned_profile(d, params, distance_mask(d, 1.0), 1.0)
    amps = (1.0, 1.3, 0.6, 1.0)
    times = np.concatenate([[0.0], np.cumsum(np.abs(np.diff(amps)) / da)])
    return Scenario("hysteresis-1d", d, params, init, ForcingSchedule(tuple(np.round(times, 9)), amps))


def radial(h: float = 1 / 64, half_box: float = 8.0, params: HysteresisParams = STANDARD,
           rho0: float | None = None, amplitude: float = 2.0, stable: bool = False) -> Scenario:
    """Disk of radius 1 at the origin; wetted ring of radius ``rho0`` (default: dry).

    With ``stable`` the initial state is the minimizer at ``amplitude`` started
    from that mask instead of the pinned profile on it.
    """
    d = build_disk_complement_domain([(0.0, 0.0)], 1.0, ((-half_box, half_box), (-half_box, half_box)), h)
    if rho0 is None:
        mask = d.dirichlet.copy()
    else:
        X, Y = d.coordinates()
        mask = d.dirichlet | (d.flippable & (np.hypot(X, Y) <= rho0))
    if stable:
        init = stable_initial(d, params, mask, amplitude)
    else:
        init = pinned_profile(d, params, mask, amplitude)
    return Scenario("radial", d, params, init)


def two_sided_1d(h: float = 1 / 128, params: HysteresisParams = STANDARD, length: float = 2.0,
                 a_start: float = 0.3) -> Scenario:
    d = build_interval_domain(length, h, two_sided=True)
    init = stable_initial(d, params, d.dirichlet, a_start)
    return Scenario("two-sided-1d", d, params, init)


def two_disks(h: float = 1 / 8, params: HysteresisParams = STANDARD, a_start: float = 0.5) -> Scenario:
    """Two disks of radius 0.5 at (-1.5, 0) and (1.5, 0)."""
    d = build_disk_complement_domain([(-1.5, 0.0), (1.5, 0.0)], 0.5, ((-4.5, 4.5), (-3.5, 3.5)), h)
    init = stable_initial(d, params, d.dirichlet, a_start)
    return Scenario("two-disks", d, params, init)


def mean_radius(profile: Profile, outer: bool = True) -> float:
    """Mean distance to the origin of the dry cells touching the wet set.

    With ``outer=False`` the wet cells touching dry ones are used instead.
    """
    d = profile.domain
    X, Y = d.coordinates()
    st = ndimage.generate_binary_structure(2, 1)
    if outer:
        ring = d.interior & ~profile.mask & ndimage.binary_dilation(profile.mask, st)
    else:
        ring = profile.mask & d.interior & ndimage.binary_dilation(d.interior & ~profile.mask, st)
    return float(np.hypot(X, Y)[ring].mean())


def free_boundary_position_1d(profile: Profile) -> float:
    """Center of the first dry cell, where the piecewise linear profile reaches zero."""
    d = profile.domain
    wet = np.flatnonzero(profile.mask)
    return float(d.origin[0] + (wet.max() + 1) * d.h)
