"""One incremental step: minimizers of E[mask0, .] with prescribed boundary data.

The search works on wetted cell sets. For a trial set the height is the
discrete harmonic function with the boundary data on DIRICHLET cells and zero
on dry cells, so the energy of a set is exact. Trial sets are improved by
batches of single-cell flips, each batch confirmed by an exact energy
comparison, until the exact one-flip check finds no improving flip.

Exact one-flip energy changes use rank-one updates of the factorized
Laplacian: removing cell c raises D by ``u_c**2 / G_cc`` and adding an
outside cell o lowers D by ``r_o**2 / (deg_o - k^T G k)``, where ``G`` is the
inverse of the graph Laplacian on the wet INTERIOR cells.
"""

from __future__ import annotations

import hashlib
import logging
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import ndimage
from scipy.linalg import solve_triangular

from .energy import EnergyBreakdown, HysteresisParams, Profile, augmented_energy, field_dirichlet_energy
from .grid import GridDomain, coarsen, dirichlet_values
from . import kernels

log = logging.getLogger(__name__)

MAX = "max"
MIN = "min"
SMALL_GRID = 400
COARSE_TARGET = 5_000
SCREEN_MARGIN = 0.01


class SolverFault(RuntimeError):
    """Linear solve failed or produced an inconsistent field."""


class TruncationError(RuntimeError):
    """The wetted set reached the guard band; enlarge the computational box."""


class NonTermination(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class MinimizeSpec:
    mask0: np.ndarray
    amplitude: float
    selection: str = MAX
    tol_lin: float = 1e-10
    tol_E: float = 1e-10
    search: str = "global"
    allow_guard_contact: bool = False
    max_sweeps: int = 100_000

    def __post_init__(self):
        if self.selection not in (MIN, MAX):
            raise ValueError("selection must be 'min' or 'max'")
        if not (self.tol_lin > 0 and self.tol_E > 0):
            raise ValueError("tolerances must be positive")
        if self.search not in ("global", "local"):
            raise ValueError("search must be 'global' or 'local'")


@dataclass
class Certificate:
    """Worst exact energy change over single-cell flips next to the free boundary."""

    worst_change: float
    worst_cell: tuple | None
    worst_kind: str
    n_checked: int
    tol: float
    add_changes: np.ndarray = field(repr=False)
    remove_changes: np.ndarray = field(repr=False)

    @property
    def passed(self) -> bool:
        return self.worst_change >= -self.tol

    def text(self) -> str:
        return (
            f"one-flip certificate: {'PASS' if self.passed else 'FAIL'}\n"
            f"flips checked: {self.n_checked}\n"
            f"worst energy change: {self.worst_change:.6e} ({self.worst_kind} at {self.worst_cell})\n"
            f"tolerance: {self.tol:.3e}\n"
        )


@dataclass
class MinimizeResult:
    profile: Profile
    breakdown: EnergyBreakdown
    iterations: int
    certificate: Certificate
    boundary_slopes: np.ndarray
    amplitude: float
    selection: str
    candidates: list = field(default_factory=list, repr=False)


# ---------------------------------------------------------------------------
# connectivity helpers


def _structure(dim):
    return ndimage.generate_binary_structure(dim, 1)


def prune_pockets(domain: GridDomain, mask: np.ndarray) -> np.ndarray:
    """Drop wetted components that do not touch a DIRICHLET cell."""
    wet = (mask & domain.active) | domain.dirichlet
    labels, n = ndimage.label(wet, _structure(domain.dim))
    if n <= 1:
        return wet
    keep = np.zeros(n + 1, dtype=bool)
    keep[np.unique(labels[domain.dirichlet])] = True
    keep[0] = False
    return keep[labels]


def _neighbour_shifts(dim):
    for axis in range(dim):
        for step in (-1, 1):
            yield axis, step


def _shift(arr: np.ndarray, axis: int, step: int, fill):
    """out[c] = arr[c + step * e_axis], ``fill`` past the grid edge."""
    out = np.full_like(arr, fill)
    n = arr.shape[axis]
    src = [slice(None)] * arr.ndim
    dst = [slice(None)] * arr.ndim
    if step > 0:
        src[axis] = slice(step, n)
        dst[axis] = slice(0, n - step)
    else:
        src[axis] = slice(0, n + step)
        dst[axis] = slice(-step, n)
    out[tuple(dst)] = arr[tuple(src)]
    return out


def _neighbour_count(domain: GridDomain, mask: np.ndarray) -> np.ndarray:
    count = np.zeros(domain.shape, dtype=np.int64)
    for axis, step in _neighbour_shifts(domain.dim):
        count += _shift(mask, axis, step, False)
    return count


def _build_simple_lut() -> np.ndarray:
    # ring order around the center: N, NE, E, SE, S, SW, W, NW (bit k)
    # 4-neighbours are the even positions; consecutive ring cells are 4-adjacent
    lut = np.zeros(256, dtype=bool)
    for code in range(256):
        bits = [(code >> k) & 1 for k in range(8)]
        four = [k for k in (0, 2, 4, 6) if bits[k]]
        if len(four) <= 1:
            lut[code] = True
            continue
        seen = {four[0]}
        stack = [four[0]]
        while stack:
            k = stack.pop()
            for nb in ((k + 1) % 8, (k - 1) % 8):
                # corner cells only link their two edge neighbours
                if bits[nb] and nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        lut[code] = all(k in seen for k in four)
    return lut


_SIMPLE_LUT = _build_simple_lut()
_RING = [(0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1)]


def simple_cells(domain: GridDomain, wet: np.ndarray, cells: np.ndarray) -> np.ndarray:
    """True where removing the cell cannot disconnect its wet neighbours.

    ``cells`` is an (k, dim) integer array. The 2D test is the local
    digital-topology check on the 8-ring; in 1D a cell is simple unless it has
    wet neighbours on both sides.
    """
    if len(cells) == 0:
        return np.zeros(0, dtype=bool)
    if domain.dim == 1:
        i = cells[:, 0]
        n = domain.shape[0]
        left = np.where(i > 0, wet[np.maximum(i - 1, 0)], False)
        right = np.where(i < n - 1, wet[np.minimum(i + 1, n - 1)], False)
        return ~(left & right)
    padded = np.pad(wet, 1, constant_values=False)
    ci = cells[:, 0] + 1
    cj = cells[:, 1] + 1
    code = np.zeros(len(cells), dtype=np.int64)
    for k, (dx, dy) in enumerate(_RING):
        code |= padded[ci + dx, cj + dy].astype(np.int64) << k
    return _SIMPLE_LUT[code]


# ---------------------------------------------------------------------------
# linear algebra


@dataclass(eq=False)
class _Assembly:
    unknown: np.ndarray          # bool grid, wet INTERIOR cells
    index: np.ndarray            # int grid, -1 off the unknowns
    cells: tuple                 # np.nonzero(unknown)
    matrix: sp.csc_matrix        # graph Laplacian on the unknowns (unscaled)
    rhs: np.ndarray              # sum of boundary values of DIRICHLET neighbours


def _grid_operator(domain: GridDomain) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Graph Laplacian and adjacency of the active cells, built once per domain."""
    cached = getattr(domain, "_grid_operator_cache", None)
    if cached is not None:
        return cached
    n = domain.size
    flat = np.arange(n).reshape(domain.shape)
    active = domain.active
    rows, cols = [], []
    for lo, hi in domain.edges():
        both = active[lo] & active[hi]
        rows.append(flat[lo][both])
        cols.append(flat[hi][both])
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    adj = sp.coo_matrix((np.ones(len(r)), (r, c)), shape=(n, n))
    adj = (adj + adj.T).tocsr()
    lap = (sp.diags(np.asarray(adj.sum(axis=1)).ravel()) - adj).tocsr()
    lap.sum_duplicates()
    lap.sort_indices()
    object.__setattr__(domain, "_grid_operator_cache", (lap, adj))
    return lap, adj


def _assemble(domain: GridDomain, wet: np.ndarray, g: np.ndarray, g_sum: np.ndarray | None = None) -> _Assembly:
    """Principal submatrix of the active-cell Laplacian on the wet INTERIOR cells.

    Every active neighbour counts in the diagonal, wet or dry, since dry
    cells hold zero. ``g_sum`` is the adjacency applied to the boundary data.
    """
    lap, adj = _grid_operator(domain)
    unknown = wet & domain.interior
    flat = np.flatnonzero(unknown)
    index = np.full(domain.shape, -1, dtype=np.int64)
    index.flat[flat] = np.arange(len(flat))
    if g_sum is None:
        g_sum = adj @ g.ravel()
    return _Assembly(unknown, index, np.nonzero(unknown), _principal(lap, flat, index.ravel()), g_sum[flat])


def _principal(lap: sp.csr_matrix, flat: np.ndarray, pos: np.ndarray) -> sp.csc_matrix:
    """Rows and columns ``flat`` of a symmetric CSR matrix, returned as CSC."""
    n = len(flat)
    start = lap.indptr[flat]
    lengths = lap.indptr[flat + 1] - start
    total = int(lengths.sum())
    offsets = np.cumsum(lengths) - lengths
    take = np.repeat(start - offsets, lengths) + np.arange(total)
    cols = pos[lap.indices[take]]
    keep = cols >= 0
    rows = np.repeat(np.arange(n), lengths)[keep]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
    # symmetric, so the CSR arrays read as CSC describe the same matrix
    return sp.csc_matrix((lap.data[take][keep], cols[keep], indptr), shape=(n, n))


def _factorize(L: sp.csc_matrix):
    return spla.splu(L, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                     options={"SymmetricMode": True})


def _solve_checked(L, factor, rhs, tol_lin, scale):
    x = factor.solve(rhs)
    limit = tol_lin * max(scale, 1e-300)
    res = np.abs(L @ x - rhs).max(initial=0.0)
    if res > limit:
        x = x + factor.solve(rhs - L @ x)
        res = np.abs(L @ x - rhs).max(initial=0.0)
        if res > limit:
            raise SolverFault(f"linear solve residual {res:.3e} exceeds {limit:.3e}")
    return x


def harmonic_solve(domain: GridDomain, mask: np.ndarray, boundary_values: np.ndarray,
                   tol_lin: float = 1e-10) -> np.ndarray:
    """Discrete harmonic field on the wet INTERIOR cells of ``mask``.

    ``boundary_values`` is a full-grid array read on DIRICHLET cells. Dry
    cells hold zero. Pockets not connected to a DIRICHLET cell must already be
    pruned; if any remain they come out as zero.
    """
    g = np.where(domain.dirichlet, boundary_values, 0.0)
    wet = (np.asarray(mask, dtype=bool) & domain.active) | domain.dirichlet
    asm = _assemble(domain, wet, g)
    u = g.copy()
    if asm.matrix.shape[0] == 0:
        return u
    factor = _factorize(asm.matrix)
    x = _solve_checked(asm.matrix, factor, asm.rhs, tol_lin, float(g.max(initial=0.0)))
    lowest = x.min()
    if lowest < -tol_lin * max(g.max(), 1.0):
        log.warning("harmonic field has negative entries (min %.3e): inconsistent mask", lowest)
    u[asm.cells] = x
    return u


# ---------------------------------------------------------------------------
# search state


@dataclass(eq=False)
class _State:
    wet: np.ndarray
    asm: _Assembly
    u: np.ndarray
    D: float
    E: float
    _factor: object = None
    _flips: tuple | None = None
    _green: tuple | None = None

    def factor(self):
        if self._factor is None and self.asm.matrix.shape[0] > 0:
            self._factor = _factorize(self.asm.matrix)
        return self._factor


def _digest(mask: np.ndarray) -> bytes:
    return hashlib.blake2b(np.packbits(mask).tobytes(), digest_size=16).digest()


class _Problem:
    """Energy landscape of E[mask0, .] at a fixed amplitude."""

    def __init__(self, domain: GridDomain, params: HysteresisParams, spec: MinimizeSpec):
        self.domain = domain
        self.params = params
        self.spec = spec
        self.g = dirichlet_values(domain, spec.amplitude)
        self.mask0 = (np.asarray(spec.mask0, dtype=bool) & domain.active) | domain.dirichlet
        self.allowed = domain.flippable | domain.dirichlet
        q = np.where(self.mask0, params.q_receding, params.q_advancing) * domain.cell_measure
        self.weight = np.where(domain.interior, q, 0.0)
        self.c_h = domain.h ** (domain.dim - 2)
        self.gmax = float(self.g.max())
        self.g_sum = _grid_operator(domain)[1] @ self.g.ravel()
        self._cache: OrderedDict[bytes, _State] = OrderedDict()
        self.evaluations = 0
        self.scale = 1.0
        self._dist = None

    # -- evaluation --------------------------------------------------------
    def canonical(self, mask: np.ndarray) -> np.ndarray:
        return prune_pockets(self.domain, mask & self.allowed)

    def evaluate(self, mask: np.ndarray, canonical: bool = False) -> _State:
        wet = mask if canonical else self.canonical(mask)
        key = _digest(wet)
        hit = self._cache.get(key)
        if hit is not None:
            self._cache.move_to_end(key)
            return hit
        asm = _assemble(self.domain, wet, self.g, self.g_sum)
        u = self.g.copy()
        factor = None
        if asm.matrix.shape[0]:
            factor = _factorize(asm.matrix)
            x = _solve_checked(asm.matrix, factor, asm.rhs, self.spec.tol_lin, self.gmax)
            if x.min() < -self.spec.tol_lin * self.gmax:
                raise SolverFault("negative harmonic values: inconsistent mask")
            u[asm.cells] = np.maximum(x, 0.0)
        D = field_dirichlet_energy(self.domain, u)
        E = D + float(self.weight[asm.unknown].sum())
        st = _State(wet=wet, asm=asm, u=u, D=D, E=E, _factor=factor)
        self.evaluations += 1
        self._cache[key] = st
        if len(self._cache) > 12:
            self._cache.popitem(last=False)
        return st

    # -- neighbourhood -----------------------------------------------------
    def inner_cells(self, st: _State) -> np.ndarray:
        """Wet INTERIOR cells with a neighbour that is dry, EXTERIOR or off the grid."""
        d = self.domain
        return st.asm.unknown & (_neighbour_count(d, st.wet & d.active) < 2 * d.dim)

    def outer_cells(self, st: _State) -> np.ndarray:
        """Dry flippable cells with a wet neighbour."""
        d = self.domain
        return d.flippable & ~st.wet & (_neighbour_count(d, st.wet) > 0)

    def local_estimates(self, st: _State):
        """Upper bounds on single-flip energy changes (other heights frozen)."""
        d = self.domain
        deg = _neighbour_count(d, d.active).astype(float)
        wet_u = np.where(st.wet, st.u, 0.0)
        nsum = np.zeros(d.shape)
        for axis, step in _neighbour_shifts(d.dim):
            nsum += _shift(wet_u, axis, step, 0.0)
        outer = self.outer_cells(st)
        inner = self.inner_cells(st)
        add = np.full(d.shape, np.inf)
        add[outer] = -self.c_h * nsum[outer] ** 2 / deg[outer] + self.weight[outer]
        rem = np.full(d.shape, np.inf)
        rem[inner] = self.c_h * deg[inner] * st.u[inner] ** 2 - self.weight[inner]
        return add, rem

    # -- exact one-flip changes ---------------------------------------------
    def _green_block(self, st: _State, positions: np.ndarray) -> np.ndarray:
        return kernels.green_block(st.factor(), positions)

    def exact_flips(self, st: _State):
        """Exact energy change of each single flip next to the free boundary.

        Returns full-grid arrays (inf where not applicable) for additions and
        removals.
        """
        if st._flips is not None:
            return st._flips
        d = self.domain
        inner = self.inner_cells(st)
        outer = self.outer_cells(st)
        add = np.full(d.shape, np.inf)
        rem = np.full(d.shape, np.inf)
        index = st.asm.index
        inner_cells = np.argwhere(inner)
        s_pos = index[inner]
        slot = np.full(st.asm.matrix.shape[0] + 1, -1, dtype=np.int64)
        slot[s_pos] = np.arange(len(s_pos))
        G = self._green_block(st, s_pos) if len(s_pos) else np.zeros((0, 0))
        st._green = (inner_cells, G)
        # removals
        if len(s_pos):
            simple = simple_cells(d, st.wet, inner_cells)
            diagG = np.diag(G)
            uu = st.u[inner]
            change = self.c_h * uu**2 / diagG - self.weight[inner]
            for k in np.nonzero(~simple)[0]:
                cell = tuple(inner_cells[k])
                trial = st.wet.copy()
                trial[cell] = False
                change[k] = self.evaluate(trial).E - st.E
            rem[inner] = change
        # additions
        outer_cells = np.argwhere(outer)
        if len(outer_cells):
            deg = np.zeros(len(outer_cells))
            r = np.zeros(len(outer_cells))
            nb_slots = []
            for axis, step in _neighbour_shifts(d.dim):
                nb = outer_cells.copy()
                nb[:, axis] += step
                inside = (nb[:, axis] >= 0) & (nb[:, axis] < d.shape[axis])
                nbc = np.clip(nb, 0, np.array(d.shape) - 1)
                t = tuple(nbc.T)
                act = inside & d.active[t]
                deg += act
                wet_nb = act & st.wet[t]
                r += np.where(wet_nb, st.u[t], 0.0)
                pos = np.where(act & (index[t] >= 0), index[t], -1)
                nb_slots.append(np.where(pos >= 0, slot[np.maximum(pos, 0)], -1))
            nb_slots = np.stack(nb_slots, axis=1)
            quad = np.zeros(len(outer_cells))
            m = nb_slots.shape[1]
            for a in range(m):
                sa = nb_slots[:, a]
                for b in range(m):
                    sb = nb_slots[:, b]
                    ok = (sa >= 0) & (sb >= 0)
                    quad[ok] += G[sa[ok], sb[ok]]
            denom = deg - quad
            t_out = tuple(outer_cells.T)
            add[t_out] = -self.c_h * r**2 / denom + self.weight[t_out]
        st._flips = (add, rem)
        return st._flips

    def certificate(self, st: _State) -> Certificate:
        add, rem = self.exact_flips(st)
        tol = self.spec.tol_E * self.scale
        n_checked = int(np.isfinite(add).sum() + np.isfinite(rem).sum())
        worst, cell, kind = np.inf, None, "none"
        if np.isfinite(add).any():
            i = np.unravel_index(np.argmin(add), add.shape)
            worst, cell, kind = float(add[i]), tuple(int(v) for v in i), "add"
        if np.isfinite(rem).any():
            i = np.unravel_index(np.argmin(rem), rem.shape)
            if rem[i] < worst:
                worst, cell, kind = float(rem[i]), tuple(int(v) for v in i), "remove"
        if not np.isfinite(worst):
            worst = 0.0
        return Certificate(worst, cell, kind, n_checked, tol, add, rem)

    # -- descent -----------------------------------------------------------
    def _try_batch(self, st: _State, cells: np.ndarray, adding: bool, min_k: int = 1) -> _State | None:
        k = len(cells)
        margin = 1e-14 * self.scale
        while k >= min_k:
            trial = st.wet.copy()
            trial[tuple(cells[:k].T)] = adding
            new = self.evaluate(trial)
            if new.E < st.E - margin:
                return new
            k //= 2
        return None

    def _ordered(self, values: np.ndarray, threshold: float) -> np.ndarray:
        sel = np.argwhere(values < threshold)
        if len(sel) == 0:
            return sel
        order = np.argsort(values[tuple(sel.T)], kind="stable")
        return sel[order]

    def descend(self, mask: np.ndarray) -> tuple[_State, int]:
        st = self.evaluate(mask)
        sweeps = 0
        quick = -1e-12 * self.scale
        while True:
            sweeps += 1
            if sweeps > self.spec.max_sweeps:
                raise NonTermination("trial-set iteration exceeded max sweeps")
            add_est, rem_est = self.local_estimates(st)
            moved = None
            for values, adding in ((add_est, True), (rem_est, False)):
                cells = self._ordered(values, quick)
                if len(cells):
                    moved = self._try_batch(st, cells, adding)
                    if moved is not None:
                        break
            if moved is not None:
                st = moved
                continue
            add, rem = self.exact_flips(st)
            tol = self.spec.tol_E * self.scale
            for values, adding in ((add, True), (rem, False)):
                cells = self._ordered(values, -tol)
                if len(cells):
                    moved = self._try_batch(st, cells, adding)
                    if moved is not None:
                        break
            if moved is None:
                moved = self._collective(st)
            if moved is None:
                return st, sweeps
            st = moved

    def _add_chain(self, st: _State) -> tuple[float, np.ndarray]:
        """Greedy chain of additions from the outer layer, exact energies.

        Each step adds the outer cell with the lowest exact energy change
        given the cells added so far (bordered-inverse update of the Green's
        block). Returns the best cumulative change and its prefix.
        """
        d = self.domain
        inner_cells, G = st._green
        outer_cells = np.argwhere(self.outer_cells(st))
        n_s, n_o = len(inner_cells), len(outer_cells)
        if n_o == 0:
            return 0.0, outer_cells
        size = n_s + n_o
        tpos = np.full(d.shape, -1, dtype=np.int64)
        if n_s:
            tpos[tuple(inner_cells.T)] = np.arange(n_s)
        tpos[tuple(outer_cells.T)] = n_s + np.arange(n_o)
        GT = np.zeros((size, size))
        GT[:n_s, :n_s] = G
        uT = np.zeros(size)
        if n_s:
            uT[:n_s] = st.u[tuple(inner_cells.T)]
        wet = np.zeros(size + 1, dtype=bool)
        wet[:n_s] = True
        nbT, deg = self._layer_neighbours(outer_cells, tpos)
        flat = np.ravel_multi_index(tuple(outer_cells.T), d.shape)
        gs = self.g_sum[flat]
        w = self.weight[tuple(outer_cells.T)]
        avail = np.ones(n_o, dtype=bool)
        return self._run_chain(
            n_o, avail,
            lambda: self._add_changes(GT, uT, wet, nbT, deg, gs, w),
            lambda j, rho, sj: self._add_update(GT, uT, wet, nbT[j], n_s + j, rho, sj),
            outer_cells,
        )

    def _layer_neighbours(self, cells: np.ndarray, tpos: np.ndarray):
        d = self.domain
        nbT, deg = [], np.zeros(len(cells))
        for axis, step in _neighbour_shifts(d.dim):
            nb = cells.copy()
            nb[:, axis] += step
            inside = (nb[:, axis] >= 0) & (nb[:, axis] < d.shape[axis])
            t = tuple(np.clip(nb, 0, np.array(d.shape) - 1).T)
            act = inside & d.active[t]
            deg += act
            nbT.append(np.where(act, tpos[t], -1))
        return np.stack(nbT, axis=1), deg

    def _add_changes(self, GT, uT, wet, nbT, deg, gs, w):
        # index -1 maps to the sentinel slot wet[-1] = False
        live = wet[nbT]
        idx = np.where(live, nbT, 0)
        rho = gs + np.where(live, uT[idx], 0.0).sum(axis=1)
        quad = np.zeros(len(nbT))
        for a in range(nbT.shape[1]):
            for b in range(nbT.shape[1]):
                ok = live[:, a] & live[:, b]
                quad += np.where(ok, GT[idx[:, a], idx[:, b]], 0.0)
        s = deg - quad
        # s vanishes only for cells without active neighbours, which stay dry
        safe = np.where(s > 0, s, 1.0)
        change = np.where(s > 0, -self.c_h * rho**2 / safe + w, np.inf)
        return change, rho, s

    @staticmethod
    def _add_update(GT, uT, wet, nbs, o, rho, s):
        nbs = [t for t in nbs if t >= 0 and wet[t]]
        gvec = GT[:, nbs].sum(axis=1)
        u_o = rho / s
        uT += gvec * u_o
        uT[o] = u_o
        GT += np.outer(gvec, gvec) / s
        GT[:, o] = gvec / s
        GT[o, :] = gvec / s
        GT[o, o] = 1.0 / s
        wet[o] = True

    def _remove_chain(self, st: _State) -> tuple[float, np.ndarray]:
        """Greedy chain of removals from the inner layer, exact energies."""
        inner_cells, G = st._green
        if len(inner_cells) == 0:
            return 0.0, inner_cells
        GS = G.copy()
        uS = st.u[tuple(inner_cells.T)].copy()
        w = self.weight[tuple(inner_cells.T)]
        avail = np.ones(len(inner_cells), dtype=bool)

        def changes():
            diag = np.diag(GS)
            safe = np.where(avail, diag, 1.0)
            return self.c_h * uS**2 / safe - w, None, None

        def update(c, _rho, _s):
            col = GS[:, c].copy()
            uS[:] -= col * (uS[c] / col[c])
            GS[:] -= np.outer(col, col) / col[c]
            uS[c] = 0.0

        return self._run_chain(len(inner_cells), avail, changes, update, inner_cells)

    def _run_chain(self, n, avail, changes, update, cells, patience: int = 32):
        order = []
        cum = best = 0.0
        best_len = 0
        for _ in range(n):
            dE, rho, s = changes()
            dE = np.where(avail, dE, np.inf)
            j = int(np.argmin(dE))
            if not np.isfinite(dE[j]):
                break
            cum += float(dE[j])
            order.append(j)
            if cum < best:
                best, best_len = cum, len(order)
            elif len(order) - best_len > patience:
                break
            update(j, None if rho is None else rho[j], None if s is None else s[j])
            avail[j] = False
        return best, cells[order[:best_len]]

    def _front_distance(self) -> np.ndarray:
        if self._dist is None:
            self._dist = ndimage.distance_transform_edt(~self.domain.dirichlet)
        return self._dist

    def _add_system(self, st: _State, cells: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Schur complement S and coupling r for wetting the outer cells ``cells``.

        Wetting a set P of them changes the Dirichlet energy by
        ``-c_h r_P^T S_PP^{-1} r_P``; no new factorization is needed.
        """
        d = self.domain
        inner_cells, G = st._green
        n_s = len(inner_cells)
        tpos = np.full(d.shape, -1, dtype=np.int64)
        if n_s:
            tpos[tuple(inner_cells.T)] = np.arange(n_s)
        bpos = np.full(d.shape, -1, dtype=np.int64)
        bpos[tuple(cells.T)] = np.arange(len(cells))
        nb_s, deg = self._layer_neighbours(cells, tpos)
        nb_b, _ = self._layer_neighbours(cells, bpos)
        k = len(cells)
        E = np.zeros((n_s, k))
        A = np.zeros((k, k))
        rows = np.arange(k)
        for col in range(nb_s.shape[1]):
            ok = nb_s[:, col] >= 0
            np.add.at(E, (nb_s[ok, col], rows[ok]), 1.0)
            ok = nb_b[:, col] >= 0
            A[rows[ok], nb_b[ok, col]] = 1.0
        flat = np.ravel_multi_index(tuple(cells.T), d.shape)
        r = self.g_sum[flat] + E.T @ st.u[tuple(inner_cells.T)] if n_s else self.g_sum[flat]
        schur = np.diag(deg) - A - (E.T @ (G @ E) if n_s else 0.0)
        return schur, r

    def _add_set_change(self, st: _State, cells: np.ndarray) -> float:
        """Exact energy change of adding the outer cells ``cells`` together."""
        schur, r = self._add_system(st, cells)
        gain = -self.c_h * float(r @ np.linalg.solve(schur, r))
        return gain + float(self.weight[tuple(cells.T)].sum())

    def _remove_set_change(self, st: _State, cells: np.ndarray) -> float:
        """Exact energy change of removing the inner-layer cells ``cells`` together."""
        inner_cells, G = st._green
        pos = np.full(self.domain.shape, -1, dtype=np.int64)
        pos[tuple(inner_cells.T)] = np.arange(len(inner_cells))
        sel = pos[tuple(cells.T)]
        uC = st.u[tuple(cells.T)]
        rise = self.c_h * float(uC @ np.linalg.solve(G[np.ix_(sel, sel)], uC))
        return rise - float(self.weight[tuple(cells.T)].sum())

    def _best_prefix(self, M: np.ndarray, b: np.ndarray, w: np.ndarray, order: np.ndarray,
                     adding: bool) -> tuple[float, int]:
        """Lowest exact change over all prefixes of ``order``.

        The Cholesky factor of the reordered SPD matrix holds the factors of
        every leading block, so one factorization prices all prefixes.
        """
        try:
            L = np.linalg.cholesky(M[np.ix_(order, order)])
        except np.linalg.LinAlgError:
            return np.inf, 0
        y = solve_triangular(L, b[order], lower=True, check_finite=False)
        quad = self.c_h * np.cumsum(y * y)
        ws = np.cumsum(w[order])
        change = ws - quad if adding else quad - ws
        k = int(np.argmin(change))
        return float(change[k]), k + 1

    def _prefix_moves(self, st: _State, add: np.ndarray, rem: np.ndarray) -> list:
        """Prefix sets along the front under several orderings, priced exactly."""
        dist = self._front_distance()
        tol = self.spec.tol_E * self.scale
        out = []
        outer = np.argwhere(np.isfinite(add))
        if len(outer) >= 2:
            schur, r = self._add_system(st, outer)
            t = tuple(outer.T)
            w = self.weight[t]
            for key in (add[t], dist[t], -r):
                order = np.argsort(key, kind="stable")
                change, k = self._best_prefix(schur, r, w, order, True)
                if change < -tol:
                    out.append((change, outer[order[:k]], True))
        inner_cells, G = st._green
        if len(inner_cells) >= 2:
            t = tuple(inner_cells.T)
            u = st.u[t]
            w = self.weight[t]
            for key in (rem[t], -dist[t], u):
                order = np.argsort(key, kind="stable")
                change, k = self._best_prefix(G, u, w, order, False)
                if change < -tol:
                    out.append((change, inner_cells[order[:k]], False))
        return out

    def _collective(self, st: _State) -> _State | None:
        """Multi-cell moves along the front with exactly evaluated energies.

        A row along a flat facet can lower the energy even when no single
        cell of it does. Candidates are greedy chains and prefixes of the
        front cells ordered by single-flip change, distance and coupling.
        """
        add, rem = self.exact_flips(st)
        tol = self.spec.tol_E * self.scale
        options = []
        gain, cells = self._add_chain(st)
        if gain < -tol:
            options.append((gain, cells, True))
        gain, cells = self._remove_chain(st)
        if gain < -tol:
            options.append((gain, cells, False))
        options.extend(self._prefix_moves(st, add, rem))
        options.sort(key=lambda item: item[0])
        for _, cells, adding in options:
            trial = st.wet.copy()
            trial[tuple(cells.T)] = adding
            new = self.evaluate(trial)
            if new.E < st.E - 1e-14 * self.scale:
                return new
        return None

    def extend_ties(self, st: _State, selection: str) -> _State:
        """Move along zero-cost flips toward the selection direction."""
        tol = self.spec.tol_E * self.scale
        while True:
            add, rem = self.exact_flips(st)
            values = add if selection == MAX else rem
            cells = self._ordered(values, tol)
            if len(cells) == 0:
                return st
            trial = st.wet.copy()
            trial[tuple(cells[0])] = selection == MAX
            new = self.evaluate(trial)
            if new.E > st.E + tol:
                return st
            st = new


# ---------------------------------------------------------------------------
# candidate generation


def _block_fraction(domain: GridDomain, arr: np.ndarray, factor: int) -> np.ndarray:
    pad = [(0, (-n) % factor) for n in domain.shape]
    a = np.pad(arr.astype(float), pad)
    if domain.dim == 1:
        return a.reshape(-1, factor).mean(axis=-1)
    nx, ny = a.shape
    return a.reshape(nx // factor, factor, ny // factor, factor).mean(axis=(1, 3))


def _family_radii(prob: _Problem, bound: float, max_candidates: int,
                  reference: np.ndarray | None = None, margin: float = 0.0) -> list[float]:
    """Radii r at which E(M_r) has a local minimum, best first.

    With ``reference`` given, minima whose energy exceeds the energy of that
    set by more than ``margin`` (relative) are dropped.
    """
    d = prob.domain
    dist = ndimage.distance_transform_edt(~d.dirichlet, sampling=d.h)
    flat = dist[d.flippable]
    levels, inverse = np.unique(flat, return_inverse=True)
    if levels.size == 0:
        return []
    # weighted volume of M_r is a lower bound on its energy
    lower = np.cumsum(np.bincount(inverse, weights=prob.weight[d.flippable]))
    n_levels = levels.size
    ladder = np.unique(np.geomspace(1, n_levels, num=min(n_levels, 16)).astype(int) - 1)
    energies: dict[int, float] = {}

    def energy_at(k: int) -> float:
        if k not in energies:
            mask = (dist <= levels[k]) & d.flippable
            energies[k] = prob.evaluate(mask).E
        return energies[k]

    best = bound
    for k in ladder:
        if lower[k] > best:
            break
        best = min(best, energy_at(k))
    probed = [int(k) for k in ladder if k in energies]
    minima = []
    for pos, k in enumerate(probed):
        left = energies[probed[pos - 1]] if pos > 0 else np.inf
        right = energies[probed[pos + 1]] if pos + 1 < len(probed) else np.inf
        if energies[k] <= left and energies[k] <= right:
            lo = probed[pos - 1] if pos > 0 else k
            hi = probed[pos + 1] if pos + 1 < len(probed) else k
            minima.append((energies[k], lo, hi, k))
    minima.sort()
    out = []
    for _, lo, hi, k_probe in minima[:max_candidates]:
        # ternary search over level indices inside the bracket; E(M_r) need
        # not be unimodal there, so the probed minimum stays a candidate
        a, b = lo, hi
        while b - a > 2:
            m1 = a + (b - a) // 3
            m2 = b - (b - a) // 3
            if energy_at(m1) <= energy_at(m2):
                b = m2
            else:
                a = m1
        k = min([*range(a, b + 1), k_probe], key=energy_at)
        out.append((energy_at(k), float(levels[k])))
    if reference is not None:
        ref = prob.evaluate(reference)
        cap = ref.E + margin * abs(ref.E)
        # a member within two layers of the reference lies in its basin
        band = 2 * max(1, int(np.count_nonzero(prob.inner_cells(ref))))
        kept = []
        for e, r in out:
            member = prob.canonical((dist <= r) & d.flippable)
            if e <= cap and np.count_nonzero(member ^ ref.wet) > band:
                kept.append((e, r))
        out = kept
    return [r for _, r in out]


def _distance_family(prob: _Problem, bound: float, max_candidates: int = 3) -> list[np.ndarray]:
    """Sets within distance r of the DIRICHLET layer at the best radii r.

    On large grids the radii are ranked on a block-coarsened copy of the
    domain; the descent on the fine grid absorbs the O(coarse h) offset.
    """
    d = prob.domain
    factor = 1
    while np.count_nonzero(d.flippable) / factor**d.dim > COARSE_TARGET:
        factor *= 2
    if factor == 1:
        radii = _family_radii(prob, bound, max_candidates)
    else:
        reference = None
        if np.any(prob.mask0 & d.interior):
            inner = _block_fraction(d, d.interior, factor)
            wet = _block_fraction(d, prob.canonical(prob.mask0) & d.interior, factor)
            reference = wet >= 0.5 * np.maximum(inner, 1e-300)
        radii = _family_radii(_coarse_problem(prob, factor), np.inf, max_candidates,
                              reference=reference, margin=SCREEN_MARGIN)
        # narrow the window on intermediate grids before paying fine solves
        while factor >= 8:
            finer = factor // 4
            mid = _coarse_problem(prob, finer)
            radii = [_refine_radius(mid, r, 2.0 * factor * d.h) for r in radii]
            factor = finer
        radii = [_refine_radius(prob, r, factor * d.h) for r in radii]
    dist = ndimage.distance_transform_edt(~d.dirichlet, sampling=d.h)
    return [(dist <= r) & d.flippable for r in radii]


def _coarse_problem(prob: _Problem, factor: int) -> _Problem:
    d = prob.domain
    cd = coarsen(d, factor)
    frac = _block_fraction(d, prob.mask0 & d.interior, factor)
    inner = _block_fraction(d, d.interior, factor)
    cmask0 = (frac >= 0.5 * np.maximum(inner, 1e-300)) & (inner > 0)
    cspec = MinimizeSpec(mask0=cmask0, amplitude=prob.spec.amplitude,
                         tol_lin=prob.spec.tol_lin, tol_E=prob.spec.tol_E)
    return _Problem(cd, prob.params, cspec)


def _refine_radius(prob: _Problem, r: float, halfwidth: float) -> float:
    """Golden-section search for the best distance level within ``r +- halfwidth``.

    Levels closer than h/2 are merged, keeping the largest of each group.
    """
    d = prob.domain
    dist = ndimage.distance_transform_edt(~d.dirichlet, sampling=d.h)
    vals = dist[d.flippable]
    levels = np.unique(vals[(vals >= r - halfwidth) & (vals <= r + halfwidth)])
    if levels.size == 0:
        return r
    bins = np.floor(levels / (0.5 * d.h)).astype(np.int64)
    levels = levels[np.r_[bins[1:] != bins[:-1], True]]
    cache: dict[int, float] = {}

    def energy_at(k: int) -> float:
        if k not in cache:
            cache[k] = prob.evaluate((dist <= levels[k]) & d.flippable).E
        return cache[k]

    inv_phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = 0, levels.size - 1
    m1 = b - int(round(inv_phi * (b - a)))
    m2 = a + int(round(inv_phi * (b - a)))
    while b - a > 3:
        if m1 >= m2:
            m1, m2 = (a + b) // 2, (a + b) // 2 + 1
        if energy_at(m1) <= energy_at(m2):
            b, m2 = m2, m1
            m1 = b - int(round(inv_phi * (b - a)))
        else:
            a, m1 = m1, m2
            m2 = a + int(round(inv_phi * (b - a)))
    return float(levels[min(range(a, b + 1), key=energy_at)])


def _starts(prob: _Problem) -> list[tuple[str, np.ndarray]]:
    d = prob.domain
    spec = prob.spec
    base = prob.canonical(prob.mask0)
    starts = []
    has_interior = bool(np.any(base & d.interior))
    if has_interior or spec.search == "local":
        starts.append(("continuation", base))
    if spec.search == "global":
        small = int(np.count_nonzero(d.flippable)) <= SMALL_GRID
        if small:
            starts.append(("full", prob.canonical(prob.allowed)))
            starts.append(("dry", d.dirichlet.copy()))
        bound = min((prob.evaluate(m).E for _, m in starts), default=np.inf)
        for k, m in enumerate(_distance_family(prob, bound)):
            starts.append((f"distance{k}", prob.canonical(m)))
    if not starts:
        starts.append(("continuation", base))
    unique, seen = [], set()
    for name, m in starts:
        key = _digest(m)
        if key not in seen:
            seen.add(key)
            unique.append((name, m))
    return unique


# ---------------------------------------------------------------------------
# public entry points


def free_boundary_cells(profile: Profile) -> np.ndarray:
    """Wet INTERIOR cells with an active dry neighbour."""
    d = profile.domain
    dry = d.active & ~profile.mask
    return profile.mask & d.interior & (_neighbour_count(d, dry) > 0)


def boundary_slopes(profile: Profile) -> np.ndarray:
    """Discrete |grad u| on free-boundary cells (NaN elsewhere).

    Along each axis the difference toward a dry neighbour is used when there
    is one, otherwise the central difference.
    """
    d = profile.domain
    u = profile.u
    wet = profile.mask
    fb = free_boundary_cells(profile)
    grad2 = np.zeros(d.shape)
    for axis in range(d.dim):
        up = _shift(u, axis, 1, 0.0)
        dn = _shift(u, axis, -1, 0.0)
        up_dry = _shift(d.active & ~wet, axis, 1, False)
        dn_dry = _shift(d.active & ~wet, axis, -1, False)
        central = (up - dn) / (2 * d.h)
        comp = np.where(up_dry, (u - up) / d.h, np.where(dn_dry, (u - dn) / d.h, central))
        grad2 += comp**2
    out = np.full(d.shape, np.nan)
    out[fb] = np.sqrt(grad2[fb])
    return out


def _to_profile(domain: GridDomain, st: _State) -> Profile:
    u = np.where(st.wet, st.u, 0.0)
    return Profile(domain, u, st.wet.copy())


def minimize(spec: MinimizeSpec, domain: GridDomain, params: HysteresisParams) -> MinimizeResult:
    """Extreme (MAX or MIN) minimizer of E[mask0, .] at the given amplitude."""
    prob = _Problem(domain, params, spec)
    starts = _starts(prob)
    prob.scale = max(1.0, min(abs(prob.evaluate(m).E) for _, m in starts))
    finals = []
    sweeps = 0
    for name, m in starts:
        st, n = prob.descend(m)
        sweeps += n
        finals.append((name, st))
    if all(name != "continuation" for name, _ in starts):
        # staying put must always be a competitor
        base = prob.evaluate(prob.canonical(prob.mask0))
        if base.E < min(st.E for _, st in finals):
            st, n = prob.descend(base.wet)
            sweeps += n
            finals.append(("continuation", st))
    best_E = min(st.E for _, st in finals)
    prob.scale = max(1.0, abs(best_E))
    tol = spec.tol_E * prob.scale
    tied = [st for _, st in finals if st.E <= best_E + tol]
    st = min(tied, key=lambda s: s.E)
    if len(tied) > 1:
        combo = tied[0].wet.copy()
        for other in tied[1:]:
            combo = combo | other.wet if spec.selection == MAX else combo & other.wet
        joined = prob.evaluate(combo)
        if joined.E <= best_E + tol:
            st = joined
    st = prob.extend_ties(st, spec.selection)
    cert = prob.certificate(st)
    if not cert.passed:
        st, n = prob.descend(st.wet)
        sweeps += n
        cert = prob.certificate(st)
    profile = _to_profile(domain, st)
    if not spec.allow_guard_contact and np.any(profile.mask & domain.guard_adjacent()):
        raise TruncationError("wetted set touches the guard band; enlarge the box")
    breakdown = augmented_energy(prob.mask0, profile, params)
    return MinimizeResult(
        profile=profile,
        breakdown=breakdown,
        iterations=sweeps,
        certificate=cert,
        boundary_slopes=boundary_slopes(profile),
        amplitude=spec.amplitude,
        selection=spec.selection,
        candidates=[(name, s.E) for name, s in finals],
    )


def certify_one_flip(result: MinimizeResult, spec: MinimizeSpec, domain: GridDomain,
                     params: HysteresisParams, method: str = "rank-one") -> Certificate:
    """Exact one-flip check of ``result``.

    ``method="resolve"`` re-solves the harmonic problem for every flip; the
    default uses the rank-one formulas on the factorized Laplacian.
    """
    prob = _Problem(domain, params, spec)
    st = prob.evaluate(result.profile.mask, canonical=True)
    prob.scale = max(1.0, abs(st.E))
    if method == "rank-one":
        return prob.certificate(st)
    if method != "resolve":
        raise ValueError("method must be 'rank-one' or 'resolve'")
    add = np.full(domain.shape, np.inf)
    rem = np.full(domain.shape, np.inf)
    for cell in np.argwhere(prob.inner_cells(st)):
        trial = st.wet.copy()
        trial[tuple(cell)] = False
        rem[tuple(cell)] = prob.evaluate(trial).E - st.E
    for cell in np.argwhere(prob.outer_cells(st)):
        trial = st.wet.copy()
        trial[tuple(cell)] = True
        add[tuple(cell)] = prob.evaluate(trial).E - st.E
    st._flips = (add, rem)
    return prob.certificate(st)


def energy_of_mask(domain: GridDomain, params: HysteresisParams, mask0: np.ndarray,
                   mask: np.ndarray, amplitude: float) -> tuple[Profile, EnergyBreakdown]:
    """Harmonic profile on a (pruned) trial set and its augmented energy."""
    spec = MinimizeSpec(mask0=mask0, amplitude=amplitude)
    prob = _Problem(domain, params, spec)
    st = prob.evaluate(np.asarray(mask, dtype=bool))
    profile = _to_profile(domain, st)
    return profile, augmented_energy(prob.mask0, profile, params)


@dataclass
class SlopeReport:
    slopes: np.ndarray
    cells: np.ndarray
    lower: float
    upper: float
    flagged: np.ndarray

    @property
    def ok(self) -> bool:
        return len(self.flagged) == 0

    @property
    def mean_slope_sq(self) -> float:
        return float(np.mean(self.slopes**2)) if len(self.slopes) else float("nan")


def slope_report(result: MinimizeResult, params: HysteresisParams, tol_slope: float = 0.15) -> SlopeReport:
    s = result.boundary_slopes
    cells = np.argwhere(np.isfinite(s))
    vals = s[tuple(cells.T)] if len(cells) else np.zeros(0)
    lower = params.q_receding - tol_slope
    upper = params.q_advancing + tol_slope
    bad = (vals**2 < lower) | (vals**2 > upper)
    return SlopeReport(vals, cells, lower, upper, cells[bad])
