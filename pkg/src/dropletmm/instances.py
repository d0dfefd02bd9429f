"""Seeded random test instances for the property suites.

Instances are drawn with ``numpy.random.Generator(PCG64(seed))`` so a seed
reproduces the same instance on every platform numpy supports.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .energy import HysteresisParams
from .grid import DIRICHLET, EXTERIOR, INTERIOR, GridDomain, build_domain_from_labels


@dataclass(frozen=True, eq=False)
class Instance:
    ident: str
    domain: GridDomain
    params: HysteresisParams
    mask0: np.ndarray
    amplitude: float


def rng_for(seed: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64([int(seed), int(stream)]))


def random_params(rng: np.random.Generator) -> HysteresisParams:
    return HysteresisParams(mu_minus=float(rng.uniform(0.05, 0.9)), mu_plus=float(rng.uniform(0.05, 1.5)))


def _random_mask0(rng, domain: GridDomain) -> np.ndarray:
    mask0 = domain.dirichlet.copy()
    if rng.random() < 0.3:
        return mask0
    cand = domain.flippable & (rng.random(domain.shape) < rng.uniform(0.2, 0.8))
    mask0 |= cand
    # keep only parts attached to the boundary data, like a real stable state
    lab, _ = ndimage.label(mask0, ndimage.generate_binary_structure(domain.dim, 1))
    keep = np.unique(lab[domain.dirichlet])
    return np.isin(lab, keep[keep > 0])


def tiny_1d(seed: int, stream: int = 0) -> Instance:
    """Interval with at most 16 flippable cells, one or two DIRICHLET ends."""
    rng = rng_for(seed, stream)
    n_int = int(rng.integers(4, 17))
    two_sided = bool(rng.random() < 0.4)
    n = n_int + (2 if two_sided else 1) + (0 if two_sided else 2)
    labels = np.full(n, INTERIOR, dtype=np.int8)
    labels[0] = DIRICHLET
    guard = np.zeros(n, dtype=bool)
    phi = np.ones(n)
    if two_sided:
        labels[-1] = DIRICHLET
        phi[-1] = float(rng.uniform(1.0, 1.6))
    else:
        guard[-2:] = True
    h = 1.0 / n_int
    dom = build_domain_from_labels(labels, h, phi=phi, guard=guard)
    params = random_params(rng)
    amp = float(rng.uniform(0.1, 1.5))
    return Instance(f"1d-{seed}-{stream}", dom, params, _random_mask0(rng, dom), amp)


def tiny_2d(seed: int, stream: int = 0) -> Instance:
    """Small 2D patch with EXTERIOR border, a few DIRICHLET cells, <= 16 flippable cells."""
    rng = rng_for(seed, stream)
    while True:
        nx, ny = int(rng.integers(3, 6)), int(rng.integers(3, 6))
        labels = np.full((nx + 2, ny + 2), EXTERIOR, dtype=np.int8)
        inner = np.full((nx, ny), INTERIOR, dtype=np.int8)
        inner[rng.random((nx, ny)) < 0.12] = EXTERIOR
        n_dir = int(rng.integers(1, 4))
        idx = rng.choice(nx * ny, size=n_dir, replace=False)
        inner.flat[idx] = DIRICHLET
        labels[1:-1, 1:-1] = inner
        n_flip = int(np.count_nonzero(labels == INTERIOR))
        if not 3 <= n_flip <= 16:
            continue
        lab, _ = ndimage.label(labels != EXTERIOR, ndimage.generate_binary_structure(2, 1))
        reach = np.unique(lab[labels == DIRICHLET])
        labels[(labels == INTERIOR) & ~np.isin(lab, reach)] = EXTERIOR
        if not np.any(labels == INTERIOR):
            continue
        phi = np.where(labels == DIRICHLET, rng.uniform(1.0, 1.8, labels.shape), 0.0)
        h = float(rng.choice([0.25, 0.5, 1.0]))
        dom = build_domain_from_labels(labels, h, phi=phi)
        break
    params = random_params(rng)
    amp = float(rng.uniform(0.1, 2.0))
    return Instance(f"2d-{seed}-{stream}", dom, params, _random_mask0(rng, dom), amp)


def tiny_instance(seed: int, index: int) -> Instance:
    """Alternate 1D and 2D instances."""
    return tiny_1d(seed, index) if index % 2 == 0 else tiny_2d(seed, index)
