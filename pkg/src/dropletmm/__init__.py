"""Quasi-static droplet evolution with contact-angle hysteresis on grids."""

from .energy import EnergyBreakdown, HysteresisParams, Profile, augmented_energy
from .grid import (DIRICHLET, EXTERIOR, INTERIOR, GridDomain, build_disk_complement_domain,
                   build_domain_from_labels, build_interval_domain, dirichlet_values)
from .kernels import BACKEND as KERNEL_BACKEND
from .solver import MAX, MIN, MinimizeResult, MinimizeSpec, minimize

__version__ = "0.1.0"

__all__ = [
    "DIRICHLET", "EXTERIOR", "INTERIOR", "GridDomain", "build_interval_domain", "build_disk_complement_domain",
    "build_domain_from_labels", "dirichlet_values", "HysteresisParams", "Profile", "EnergyBreakdown",
    "augmented_energy", "MAX", "MIN", "MinimizeSpec", "MinimizeResult", "minimize", "KERNEL_BACKEND",
]
