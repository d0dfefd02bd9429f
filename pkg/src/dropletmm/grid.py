"""Cell-centered grids for the droplet domain U and its Dirichlet layer.

A :class:`GridDomain` stores one label per cell (EXTERIOR, DIRICHLET or
INTERIOR), the spatial factor of the boundary forcing on DIRICHLET cells and
a guard band of INTERIOR cells along the truncation box on which the wetted
set may never grow.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

EXTERIOR = 0
DIRICHLET = 1
INTERIOR = 2

DEFAULT_EPS0 = 1e-6
MIN_GUARD_BAND = 2


class DomainError(ValueError):
    """Invalid domain geometry or configuration."""


class ForcingPositivityError(ValueError):
    """Boundary forcing falls below the positivity floor eps0."""


def _four_neighbour_structure(dim: int) -> np.ndarray:
    return ndimage.generate_binary_structure(dim, 1)


@dataclass(frozen=True, eq=False)
class GridDomain:
    """Discretized domain. Immutable after construction.

    ``cell_class`` has shape ``(n,)`` in 1D and ``(nx, ny)`` in 2D, axis 0 is x.
    ``phi`` holds the forcing shape on DIRICHLET cells and 0 elsewhere.
    """

    dim: int
    origin: tuple[float, ...]
    h: float
    cell_class: np.ndarray
    phi: np.ndarray
    guard: np.ndarray
    guard_band: int = MIN_GUARD_BAND
    eps0: float = DEFAULT_EPS0
    recipe: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("cell_class", "phi", "guard"):
            arr = getattr(self, name)
            arr.setflags(write=False)
        if self.dim not in (1, 2):
            raise DomainError("dim must be 1 or 2")
        if self.cell_class.ndim != self.dim:
            raise DomainError("cell_class rank does not match dim")
        if self.h <= 0:
            raise DomainError("h must be positive")
        if self.guard_band < MIN_GUARD_BAND and self.guard.any():
            raise DomainError(f"guard_band must be >= {MIN_GUARD_BAND}")
        if np.any(self.guard & (self.cell_class != INTERIOR)):
            raise DomainError("guard band cells must be INTERIOR")
        dir_phi = self.phi[self.dirichlet]
        if dir_phi.size == 0:
            raise DomainError("domain has no DIRICHLET cells")
        if np.any(dir_phi < 1.0):
            raise DomainError("dirichlet_shape must satisfy phi >= 1")

    # -- geometry -----------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.cell_class.shape

    @property
    def size(self) -> int:
        return self.cell_class.size

    @property
    def cell_measure(self) -> float:
        return self.h**self.dim

    @property
    def dirichlet(self) -> np.ndarray:
        return self.cell_class == DIRICHLET

    @property
    def interior(self) -> np.ndarray:
        return self.cell_class == INTERIOR

    @property
    def exterior(self) -> np.ndarray:
        return self.cell_class == EXTERIOR

    @property
    def active(self) -> np.ndarray:
        """Non-EXTERIOR cells; these carry gradient energy."""
        return self.cell_class != EXTERIOR

    @property
    def flippable(self) -> np.ndarray:
        """INTERIOR cells outside the guard band."""
        return self.interior & ~self.guard

    def coordinates(self) -> tuple[np.ndarray, ...]:
        axes = [self.origin[k] + self.h * np.arange(self.shape[k]) for k in range(self.dim)]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def dirichlet_ring(self) -> np.ndarray:
        """INTERIOR cells 4-adjacent to a DIRICHLET cell."""
        grown = ndimage.binary_dilation(self.dirichlet, _four_neighbour_structure(self.dim))
        return grown & self.interior

    def guard_adjacent(self) -> np.ndarray:
        """Non-guard INTERIOR cells 4-adjacent to the guard band."""
        grown = ndimage.binary_dilation(self.guard, _four_neighbour_structure(self.dim))
        return grown & self.flippable

    def edges(self):
        """Yield ``(a_slices, b_slices)`` pairs addressing neighbour pairs along each axis."""
        for axis in range(self.dim):
            lo = [slice(None)] * self.dim
            hi = [slice(None)] * self.dim
            lo[axis] = slice(0, -1)
            hi[axis] = slice(1, None)
            yield tuple(lo), tuple(hi)

    def check_connectivity(self) -> bool:
        """Every INTERIOR cell reaches a DIRICHLET cell through INTERIOR cells."""
        labels, _ = ndimage.label(self.active, _four_neighbour_structure(self.dim))
        touching = np.unique(labels[self.dirichlet])
        reach = np.isin(labels, touching[touching > 0])
        return bool(np.all(reach[self.interior]))

    def label_raster(self) -> np.ndarray:
        """Cell classes as bytes: 0 EXTERIOR, 128 DIRICHLET, 255 INTERIOR."""
        out = np.zeros(self.shape, dtype=np.uint8)
        out[self.dirichlet] = 128
        out[self.interior] = 255
        return out

    def flat_index(self, idx) -> int:
        return int(np.ravel_multi_index(tuple(np.atleast_1d(idx)), self.shape))


def _check_spacing(h: float) -> None:
    if not (h > 0 and np.isfinite(h)):
        raise DomainError("h must be a positive finite number")


def build_interval_domain(
    length: float,
    h: float,
    two_sided: bool = False,
    *,
    guard_band: int = MIN_GUARD_BAND,
    eps0: float = DEFAULT_EPS0,
    phi_right: float = 1.0,
) -> GridDomain:
    """1D domain with DIRICHLET cell at x=0 and, if ``two_sided``, at x=length.

    Cell centers are ``x_i = i*h``. In the one-sided case the last
    ``guard_band`` cells toward x=length form the guard band.
    """
    _check_spacing(h)
    if length <= 0:
        raise DomainError("length must be positive")
    ratio = length / h
    n_steps = int(round(ratio))
    if abs(ratio - n_steps) > 1e-9 * max(1.0, ratio):
        raise DomainError("length must be an integer multiple of h")
    if n_steps < 4:
        raise DomainError(f"configuration error: length/h = {ratio:g} gives too few interior cells")
    n = n_steps + 1
    cell_class = np.full(n, INTERIOR, dtype=np.int8)
    cell_class[0] = DIRICHLET
    phi = np.zeros(n)
    phi[0] = 1.0
    guard = np.zeros(n, dtype=bool)
    if two_sided:
        cell_class[-1] = DIRICHLET
        phi[-1] = phi_right
    else:
        guard[-guard_band:] = True
    return GridDomain(
        dim=1,
        origin=(0.0,),
        h=float(h),
        cell_class=cell_class,
        phi=phi,
        guard=guard,
        guard_band=guard_band,
        eps0=eps0,
        recipe={"kind": "interval", "length": float(length), "h": float(h), "two_sided": bool(two_sided)},
    )


def build_disk_complement_domain(
    centers,
    r0: float,
    box,
    h: float,
    *,
    guard_band: int = MIN_GUARD_BAND,
    eps0: float = DEFAULT_EPS0,
    phi=None,
) -> GridDomain:
    """2D box minus disks of radius ``r0``; cells crossing a circle are DIRICHLET.

    ``box`` is ``((xmin, xmax), (ymin, ymax))``. ``phi`` may be a callable
    ``phi(x, y) -> array`` evaluated on DIRICHLET cell centers.
    """
    _check_spacing(h)
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    if centers.shape[1] != 2:
        raise DomainError("centers must be 2D points")
    if r0 <= 0:
        raise DomainError("r0 must be positive")
    (xmin, xmax), (ymin, ymax) = box
    if xmax <= xmin or ymax <= ymin:
        raise DomainError("empty box")
    margin = 4 * h
    for cx, cy in centers:
        if (cx - r0 - xmin < margin or xmax - cx - r0 < margin
                or cy - r0 - ymin < margin or ymax - cy - r0 < margin):
            raise DomainError("disk violates the box margin of 4h")
    for i in range(len(centers)):
        for j in range(i + 1, len(centers)):
            if np.hypot(*(centers[i] - centers[j])) <= 2 * r0:
                raise DomainError("disks overlap (center distance must exceed 2*r0)")
    nx = int(round((xmax - xmin) / h))
    ny = int(round((ymax - ymin) / h))
    x = xmin + h * (np.arange(nx) + 0.5)
    y = ymin + h * (np.arange(ny) + 0.5)
    X, Y = np.meshgrid(x, y, indexing="ij")
    cell_class = np.full((nx, ny), INTERIOR, dtype=np.int8)
    half = 0.5 * h
    for cx, cy in centers:
        dx = np.abs(X - cx)
        dy = np.abs(Y - cy)
        near = np.hypot(np.maximum(dx - half, 0.0), np.maximum(dy - half, 0.0))
        far = np.hypot(dx + half, dy + half)
        cell_class[far <= r0] = EXTERIOR
        crossing = (near < r0) & (far > r0)
        cell_class[crossing] = DIRICHLET
    guard = np.zeros((nx, ny), dtype=bool)
    guard[:guard_band, :] = True
    guard[-guard_band:, :] = True
    guard[:, :guard_band] = True
    guard[:, -guard_band:] = True
    guard &= cell_class == INTERIOR
    phi_arr = np.zeros((nx, ny))
    dmask = cell_class == DIRICHLET
    phi_arr[dmask] = 1.0 if phi is None else np.asarray(phi(X[dmask], Y[dmask]), dtype=float)
    # the first cell center sits at xmin + h/2
    origin = (xmin + half, ymin + half)
    return GridDomain(
        dim=2,
        origin=origin,
        h=float(h),
        cell_class=cell_class,
        phi=phi_arr,
        guard=guard,
        guard_band=guard_band,
        eps0=eps0,
        recipe={
            "kind": "disks",
            "centers": centers.tolist(),
            "r0": float(r0),
            "box": [[float(xmin), float(xmax)], [float(ymin), float(ymax)]],
            "h": float(h),
        },
    )


def build_domain_from_labels(
    cell_class,
    h: float,
    *,
    phi=None,
    guard=None,
    guard_band: int = MIN_GUARD_BAND,
    eps0: float = DEFAULT_EPS0,
) -> GridDomain:
    """Domain from an explicit label array; used for small test instances."""
    cell_class = np.asarray(cell_class, dtype=np.int8)
    dim = cell_class.ndim
    if guard is None:
        guard = np.zeros(cell_class.shape, dtype=bool)
    guard = np.asarray(guard, dtype=bool) & (cell_class == INTERIOR)
    phi_arr = np.zeros(cell_class.shape)
    dmask = cell_class == DIRICHLET
    phi_arr[dmask] = 1.0 if phi is None else np.asarray(phi, dtype=float)[dmask]
    dom = GridDomain(
        dim=dim,
        origin=(0.0,) * dim,
        h=float(h),
        cell_class=cell_class.copy(),
        phi=phi_arr,
        guard=guard.copy(),
        guard_band=guard_band,
        eps0=eps0,
        recipe={"kind": "labels"},
    )
    if not dom.check_connectivity():
        raise DomainError("an INTERIOR cell is not connected to any DIRICHLET cell")
    return dom


def dirichlet_values(domain: GridDomain, amplitude: float, eps0: float | None = None) -> np.ndarray:
    """Boundary data ``amplitude * phi`` as a full-grid array (zero off DIRICHLET cells)."""
    floor = domain.eps0 if eps0 is None else eps0
    if floor <= 0:
        raise ForcingPositivityError("eps0 must be positive")
    dmask = domain.dirichlet
    if amplitude * domain.phi[dmask].min() < floor:
        raise ForcingPositivityError(
            f"assumption(iii): forcing floor violated, amplitude*min(phi) = "
            f"{amplitude * domain.phi[dmask].min():g} < eps0 = {floor:g}"
        )
    out = np.zeros(domain.shape)
    out[dmask] = amplitude * domain.phi[dmask]
    return out


def domain_from_config(spec: dict, eps0: float = DEFAULT_EPS0) -> GridDomain:
    kind = spec.get("kind")
    if kind == "interval":
        return build_interval_domain(
            spec["length"], spec["h"], bool(spec.get("two_sided", False)),
            guard_band=int(spec.get("guard_band", MIN_GUARD_BAND)), eps0=eps0,
        )
    if kind == "disks":
        return build_disk_complement_domain(
            spec["centers"], spec["r0"], spec["box"], spec["h"],
            guard_band=int(spec.get("guard_band", MIN_GUARD_BAND)), eps0=eps0,
        )
    raise DomainError(f"domain.kind: unknown kind {kind!r}")


def coarsen(domain: GridDomain, factor: int) -> GridDomain:
    """Block-aggregated copy of ``domain`` with spacing ``factor * h``.

    A block is DIRICHLET if it holds any DIRICHLET cell, INTERIOR if it holds
    any INTERIOR cell, EXTERIOR otherwise. Used to rank candidate sets cheaply.
    """
    if factor <= 1:
        return domain
    shape = domain.shape
    pad = [(0, (-n) % factor) for n in shape]
    cls = np.pad(domain.cell_class, pad, constant_values=EXTERIOR)
    phi = np.pad(domain.phi, pad)
    guard = np.pad(domain.guard, pad)

    def blocks(a):
        if domain.dim == 1:
            return a.reshape(-1, factor)
        nx, ny = a.shape
        return a.reshape(nx // factor, factor, ny // factor, factor).swapaxes(1, 2).reshape(
            nx // factor, ny // factor, factor * factor)

    bc = blocks(cls)
    has_dir = (bc == DIRICHLET).any(axis=-1)
    has_int = (bc == INTERIOR).any(axis=-1)
    coarse = np.where(has_dir, DIRICHLET, np.where(has_int, INTERIOR, EXTERIOR)).astype(np.int8)
    cphi = np.where(has_dir, blocks(phi).max(axis=-1), 0.0)
    cguard = blocks(guard).any(axis=-1) & (coarse == INTERIOR)
    origin = tuple(o + 0.5 * (factor - 1) * domain.h for o in domain.origin)
    return GridDomain(
        dim=domain.dim,
        origin=origin,
        h=domain.h * factor,
        cell_class=coarse,
        phi=cphi,
        guard=cguard,
        guard_band=max(domain.guard_band, MIN_GUARD_BAND) if cguard.any() else domain.guard_band,
        eps0=domain.eps0,
        recipe={"kind": "coarsened", "factor": int(factor)},
    )

