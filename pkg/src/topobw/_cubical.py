"""Compiled kernels for superlevel cubical persistence.

All kernels take flat C-ordered arrays and a processing order in which cells
are visited (value descending, linear index ascending).
"""

import itertools

import numba
import numpy as np


def neighbor_offsets(ndim):
    """All (3**d - 1) offsets of cells sharing at least a vertex with a cell."""
    offs = [o for o in itertools.product((-1, 0, 1), repeat=ndim) if any(o)]
    return np.array(offs, dtype=np.int64).reshape(-1, ndim)


def processing_order(values):
    """Visit order: value descending, ties by ascending linear index."""
    flat = values.reshape(-1)
    return np.lexsort((np.arange(flat.size), -flat)).astype(np.int64)


@numba.njit(cache=True)
def _find(parent, x):
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


@numba.njit(cache=True)
def h0_union_find(order, shape, offsets):
    """Elder-rule union-find over top cells.

    Returns ``(births, deaths)`` as linear cell indices of every finite pair,
    including zero-persistence ones, in the order they are created.
    """
    ndim = shape.shape[0]
    n = order.shape[0]
    strides = np.ones(ndim, dtype=np.int64)
    for k in range(ndim - 2, -1, -1):
        strides[k] = strides[k + 1] * shape[k + 1]
    rank = np.empty(n, dtype=np.int64)
    for i in range(n):
        rank[order[i]] = i
    parent = np.full(n, -1, dtype=np.int64)
    birth = np.full(n, -1, dtype=np.int64)
    births = np.empty(n, dtype=np.int64)
    deaths = np.empty(n, dtype=np.int64)
    n_pairs = 0
    coord = np.empty(ndim, dtype=np.int64)
    n_off = offsets.shape[0]
    roots = np.empty(n_off, dtype=np.int64)
    for step in range(n):
        v = order[step]
        rem = v
        for k in range(ndim):
            coord[k] = rem // strides[k]
            rem -= coord[k] * strides[k]
        n_roots = 0
        for j in range(n_off):
            q = v
            inside = True
            for k in range(ndim):
                c = coord[k] + offsets[j, k]
                if c < 0 or c >= shape[k]:
                    inside = False
                    break
                q += offsets[j, k] * strides[k]
            if not inside or parent[q] < 0:
                continue
            r = _find(parent, q)
            seen = False
            for t in range(n_roots):
                if roots[t] == r:
                    seen = True
                    break
            if not seen:
                roots[n_roots] = r
                n_roots += 1
        if n_roots == 0:
            parent[v] = v
            birth[v] = v
            continue
        elder = roots[0]
        for t in range(1, n_roots):
            if rank[birth[roots[t]]] < rank[birth[elder]]:
                elder = roots[t]
        for t in range(n_roots):
            r = roots[t]
            if r == elder:
                continue
            births[n_pairs] = birth[r]
            deaths[n_pairs] = v
            n_pairs += 1
            parent[r] = elder
        parent[v] = elder
    return births[:n_pairs], deaths[:n_pairs]


@numba.njit(cache=True)
def _symmetric_difference(a, b):
    out = np.empty(a.shape[0] + b.shape[0], dtype=np.int64)
    i = 0
    j = 0
    k = 0
    while i < a.shape[0] and j < b.shape[0]:
        if a[i] < b[j]:
            out[k] = a[i]
            i += 1
            k += 1
        elif b[j] < a[i]:
            out[k] = b[j]
            j += 1
            k += 1
        else:
            i += 1
            j += 1
    while i < a.shape[0]:
        out[k] = a[i]
        i += 1
        k += 1
    while j < b.shape[0]:
        out[k] = b[j]
        j += 1
        k += 1
    return out[:k]


@numba.njit(cache=True)
def reduce_boundary(cell_order, cell_dim, cshape, max_dim):
    """Column reduction over Z/2 with clearing on a cubical complex.

    ``cell_order`` lists complex cells (linear indices into the grid of shape
    ``cshape``, coordinates odd along the axes a cell spans) in filtration
    order. Cells of dimension > ``max_dim + 1`` must be absent. Returns the
    filtration positions ``(low, col)`` of every pair.
    """
    ndim = cshape.shape[0]
    m = cell_order.shape[0]
    strides = np.ones(ndim, dtype=np.int64)
    for k in range(ndim - 2, -1, -1):
        strides[k] = strides[k + 1] * cshape[k + 1]
    total = 1
    for k in range(ndim):
        total *= cshape[k]
    pos = np.full(total, -1, dtype=np.int64)
    for i in range(m):
        pos[cell_order[i]] = i
    pivot_col = np.full(m, -1, dtype=np.int64)
    cleared = np.zeros(m, dtype=np.bool_)
    # Reduced columns, stored by the row of their pivot.
    stored = numba.typed.List()
    stored_at = np.full(m, -1, dtype=np.int64)
    lows = np.empty(m, dtype=np.int64)
    cols = np.empty(m, dtype=np.int64)
    n_pairs = 0
    coord = np.empty(ndim, dtype=np.int64)
    for dim in range(max_dim + 1, 0, -1):
        for j in range(m):
            if cell_dim[j] != dim or cleared[j]:
                continue
            cell = cell_order[j]
            rem = cell
            for k in range(ndim):
                coord[k] = rem // strides[k]
                rem -= coord[k] * strides[k]
            col = np.empty(2 * dim, dtype=np.int64)
            c = 0
            for k in range(ndim):
                if coord[k] % 2 == 1:
                    col[c] = pos[cell - strides[k]]
                    col[c + 1] = pos[cell + strides[k]]
                    c += 2
            col = np.sort(col)
            while col.shape[0] > 0:
                low = col[col.shape[0] - 1]
                if pivot_col[low] < 0:
                    break
                col = _symmetric_difference(col, stored[stored_at[low]])
            if col.shape[0] == 0:
                continue
            low = col[col.shape[0] - 1]
            pivot_col[low] = j
            stored_at[low] = len(stored)
            stored.append(col)
            cleared[low] = True
            lows[n_pairs] = low
            cols[n_pairs] = j
            n_pairs += 1
    return lows[:n_pairs], cols[:n_pairs]
