# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled enumeration kernel: one small dense Cholesky solve per wetted set."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, isfinite, NAN

cnp.import_array()

DEF MAXN = 16
DEF MAXK = 4


def brute_force_energies(nbr, dir_vals, zero_nbrs, weight, double c_h, double const):
    """Energy of every wetted subset of the flippable cells, NaN for sets with pockets."""
    cdef int[:, ::1] nb = np.ascontiguousarray(nbr, dtype=np.int32)
    cdef double[:, ::1] dv = np.ascontiguousarray(dir_vals, dtype=np.float64)
    cdef double[::1] zn = np.ascontiguousarray(zero_nbrs, dtype=np.float64)
    cdef double[::1] w = np.ascontiguousarray(weight, dtype=np.float64)
    cdef int n = w.shape[0]
    cdef int kk = nb.shape[1]
    if n > MAXN or kk > MAXK:
        raise ValueError("kernel supports at most 16 cells with 4 neighbours")
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out_arr = np.full(1 << n, np.nan)
    cdef double[::1] out = out_arr
    cdef unsigned int nbmask[MAXN]
    cdef double deg[MAXN]
    cdef double gsum[MAXN]
    cdef unsigned int diradj = 0
    cdef int i, j, k, a, b, m, p
    cdef unsigned int code, reach, grow, total = 1u << n
    cdef int idx[MAXN]
    cdef int pos[MAXN]
    cdef double L[MAXN * MAXN]
    cdef double u[MAXN]
    cdef double y[MAXN]
    cdef double full_u[MAXN]
    cdef double s, quad, vol, d
    for i in range(n):
        nbmask[i] = 0
        deg[i] = zn[i]
        gsum[i] = 0.0
        for k in range(kk):
            if nb[i, k] >= 0:
                nbmask[i] |= 1u << nb[i, k]
                deg[i] += 1.0
            if isfinite(dv[i, k]):
                deg[i] += 1.0
                gsum[i] += dv[i, k]
                diradj |= 1u << i
    with nogil:
        for code in range(total):
            # prune test: wet cells must reach a DIRICHLET-adjacent wet cell
            reach = code & diradj
            while True:
                grow = reach
                for i in range(n):
                    if (reach >> i) & 1u:
                        grow |= nbmask[i]
                grow &= code
                if grow == reach:
                    break
                reach = grow
            if reach != code:
                continue
            m = 0
            for i in range(n):
                pos[i] = -1
                if (code >> i) & 1u:
                    idx[m] = i
                    pos[i] = m
                    m += 1
            for a in range(m):
                for b in range(m):
                    L[a * MAXN + b] = 0.0
                i = idx[a]
                L[a * MAXN + a] = deg[i]
                for k in range(kk):
                    j = nb[i, k]
                    if j >= 0 and pos[j] >= 0:
                        L[a * MAXN + pos[j]] = -1.0
            # Cholesky in place (lower triangle)
            for a in range(m):
                s = L[a * MAXN + a]
                for p in range(a):
                    s -= L[a * MAXN + p] * L[a * MAXN + p]
                s = sqrt(s)
                L[a * MAXN + a] = s
                for b in range(a + 1, m):
                    d = L[b * MAXN + a]
                    for p in range(a):
                        d -= L[b * MAXN + p] * L[a * MAXN + p]
                    L[b * MAXN + a] = d / s
            for a in range(m):
                d = gsum[idx[a]]
                for p in range(a):
                    d -= L[a * MAXN + p] * y[p]
                y[a] = d / L[a * MAXN + a]
            for a in range(m - 1, -1, -1):
                d = y[a]
                for p in range(a + 1, m):
                    d -= L[p * MAXN + a] * u[p]
                u[a] = d / L[a * MAXN + a]
            for i in range(n):
                full_u[i] = 0.0
            vol = 0.0
            for a in range(m):
                full_u[idx[a]] = u[a]
                vol += w[idx[a]]
            # edge sum, each flippable pair once
            quad = 0.0
            for i in range(n):
                quad += zn[i] * full_u[i] * full_u[i]
                for k in range(kk):
                    j = nb[i, k]
                    if j > i:
                        d = full_u[i] - full_u[j]
                        quad += d * d
                    if isfinite(dv[i, k]):
                        d = full_u[i] - dv[i, k]
                        quad += d * d - dv[i, k] * dv[i, k]
            out[code] = c_h * (const + quad) + vol
    return out_arr


cdef _etree_postorder(long[::1] ptr, int[::1] ind, Py_ssize_t n):
    """Postorder rank of every node of the elimination tree of L."""
    parent_arr = np.full(n, -1, dtype=np.int64)
    cdef long[::1] parent = parent_arr
    cdef Py_ssize_t j, p, i, best
    for j in range(n):
        best = n
        for p in range(ptr[j], ptr[j + 1]):
            i = ind[p]
            if i > j and i < best:
                best = i
        if best < n:
            parent[j] = best
    # children lists in CSR form, then an explicit-stack traversal
    counts = np.bincount(parent_arr[parent_arr >= 0], minlength=n)
    cstart_arr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=cstart_arr[1:])
    cdef long[::1] cstart = cstart_arr
    kids_arr = np.argsort(parent_arr, kind="stable")[n - int(counts.sum()):]
    cdef long[::1] kids = np.ascontiguousarray(kids_arr, dtype=np.int64)
    rank_arr = np.empty(n, dtype=np.int64)
    cdef long[::1] rank = rank_arr
    stack_arr = np.empty(n, dtype=np.int64)
    nxt_arr = np.zeros(n, dtype=np.int64)
    cdef long[::1] stack = stack_arr
    cdef long[::1] nxt = nxt_arr
    cdef Py_ssize_t top, node, root, c, counter = 0
    for root in range(n):
        if parent[root] >= 0:
            continue
        top = 0
        stack[0] = root
        while top >= 0:
            node = stack[top]
            c = cstart[node] + nxt[node]
            if c < cstart[node + 1]:
                nxt[node] += 1
                top += 1
                stack[top] = kids[c]
            else:
                rank[node] = counter
                counter += 1
                top -= 1
    return rank_arr


def green_block(factor, positions):
    """Block of the inverse on ``positions`` from a symmetric SuperLU factor.

    With equal row and column permutations U = diag(U) L^T, so the block is
    W^T diag(U)^{-1} W for W = L^{-1} P e_S. Columns are sorted by permuted
    row and each row of W keeps the range of columns that can be nonzero in
    it, which skips most of the structural zeros.
    """
    Lm = factor.L.tocsc()
    cdef long[::1] ptr = np.ascontiguousarray(Lm.indptr, dtype=np.int64)
    cdef int[::1] ind = np.ascontiguousarray(Lm.indices, dtype=np.int32)
    cdef double[::1] val = np.ascontiguousarray(Lm.data, dtype=np.float64)
    rows_np = np.asarray(factor.perm_r, dtype=np.int64)[np.asarray(positions, dtype=np.int64)]
    cdef Py_ssize_t n = Lm.shape[0]
    post = _etree_postorder(ptr, ind, n)
    order = np.argsort(post[rows_np], kind="stable")
    cdef long[::1] rows = np.ascontiguousarray(rows_np[order])
    cdef Py_ssize_t k = rows.shape[0]
    if k == 0:
        return np.zeros((0, 0))
    cdef Py_ssize_t first = rows_np.min()
    cdef Py_ssize_t m = n - first
    W_arr = np.zeros((m, k))
    cdef double[:, ::1] W = W_arr
    lo_arr = np.full(m, k, dtype=np.int64)
    hi_arr = np.full(m, -1, dtype=np.int64)
    cdef long[::1] lo = lo_arr
    cdef long[::1] hi = hi_arr
    cdef Py_ssize_t a, b, j, p, i, r
    cdef double lij
    for a in range(k):
        r = rows[a] - first
        W[r, a] = 1.0
        if a < lo[r]:
            lo[r] = a
        if a > hi[r]:
            hi[r] = a
    with nogil:
        for j in range(m):
            if hi[j] < 0:
                continue
            for p in range(ptr[j + first], ptr[j + first + 1]):
                i = ind[p] - first
                if i <= j:
                    continue
                lij = val[p]
                if lij == 0.0:
                    continue
                for b in range(lo[j], hi[j] + 1):
                    W[i, b] -= lij * W[j, b]
                if lo[j] < lo[i]:
                    lo[i] = lo[j]
                if hi[j] > hi[i]:
                    hi[i] = hi[j]
    cdef double[::1] udiag = np.ascontiguousarray(factor.U.diagonal()[first:], dtype=np.float64)
    G_arr = np.zeros((k, k))
    cdef double[:, ::1] G = G_arr
    cdef double s
    with nogil:
        for j in range(m):
            if hi[j] < 0:
                continue
            for a in range(lo[j], hi[j] + 1):
                s = W[j, a] / udiag[j]
                if s == 0.0:
                    continue
                for b in range(a, hi[j] + 1):
                    G[a, b] += s * W[j, b]
    G_arr = np.triu(G_arr) + np.triu(G_arr, 1).T
    G = G_arr
    inv = np.empty(k, dtype=np.int64)
    inv[order] = np.arange(k)
    return G_arr[np.ix_(inv, inv)]
