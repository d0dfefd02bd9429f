"""Pure numpy implementation of the enumeration kernel."""

from __future__ import annotations

import numpy as np

_CHUNK = 8192


def _canonical(bits: np.ndarray, nbr: np.ndarray, dir_adj: np.ndarray) -> np.ndarray:
    """True for sets whose every wet cell reaches a DIRICHLET-adjacent wet cell."""
    reach = bits & dir_adj
    for _ in range(bits.shape[1]):
        grow = reach.copy()
        for k in range(nbr.shape[1]):
            j = nbr[:, k]
            ok = j >= 0
            grow[:, ok] |= reach[:, j[ok]]
        grow &= bits
        if np.array_equal(grow, reach):
            break
        reach = grow
    return (reach == bits).all(axis=1)


def brute_force_energies(nbr, dir_vals, zero_nbrs, weight, c_h, const):
    """Energy of every wetted subset of the flippable cells, NaN for sets with pockets.

    Subset ``code`` wets cell ``i`` iff bit ``i`` of ``code`` is set.
    """
    nbr = np.asarray(nbr, dtype=np.int64)
    dir_vals = np.asarray(dir_vals, dtype=float)
    zero_nbrs = np.asarray(zero_nbrs, dtype=float)
    weight = np.asarray(weight, dtype=float)
    n = len(weight)
    has_dir = np.isfinite(dir_vals)
    dvals = np.where(has_dir, dir_vals, 0.0)
    dir_adj = has_dir.any(axis=1)
    deg = zero_nbrs + has_dir.sum(axis=1) + (nbr >= 0).sum(axis=1)
    gsum = dvals.sum(axis=1)
    adj = np.zeros((n, n))
    for k in range(nbr.shape[1]):
        ok = nbr[:, k] >= 0
        adj[np.flatnonzero(ok), nbr[ok, k]] = 1.0
    lap = np.diag(deg) - adj
    iu, ju = np.nonzero(np.triu(adj, 1))
    out = np.full(1 << n, np.nan)
    eye = np.eye(n)
    for start in range(0, 1 << n, _CHUNK):
        codes = np.arange(start, min(start + _CHUNK, 1 << n))
        bits = ((codes[:, None] >> np.arange(n)) & 1).astype(bool)
        keep = _canonical(bits, nbr, dir_adj)
        bits = bits[keep]
        b = bits.astype(float)
        # dry cells get identity rows so every system stays n x n
        mats = lap[None] * b[:, :, None] * b[:, None, :] + eye[None] * (1.0 - b)[:, :, None]
        u = np.linalg.solve(mats, (gsum * b)[..., None])[..., 0]
        du = u[:, iu] - u[:, ju]
        quad = (du * du).sum(axis=1) + (zero_nbrs * u * u).sum(axis=1)
        quad += (((u[:, :, None] - dvals[None]) ** 2 - dvals[None] ** 2) * has_dir[None]).sum(axis=(1, 2))
        out[codes[keep]] = c_h * (const + quad) + b @ weight
    return out


def green_block(factor, positions, chunk: int = 256):
    """Block of the inverse on ``positions`` by multi-column SuperLU solves."""
    positions = np.asarray(positions, dtype=np.int64)
    n = factor.shape[0]
    k = len(positions)
    out = np.empty((k, k))
    if k == 0:
        return out
    for start in range(0, k, chunk):
        cols = positions[start:start + chunk]
        rhs = np.zeros((n, len(cols)))
        rhs[cols, np.arange(len(cols))] = 1.0
        out[:, start:start + len(cols)] = factor.solve(rhs)[positions, :]
    return 0.5 * (out + out.T)
