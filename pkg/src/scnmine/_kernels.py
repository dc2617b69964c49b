"""Compiled inner loops: assignment, tree-pair distance and DTW accumulation.

Trees are passed flattened in breadth-first order: ``feat`` (n, 3),
``first`` (index of the first child, children are contiguous), ``nchild``,
``depth`` (root = 1) and ``blank`` (distance of each subtree to its all-blank
mirror, see ``blank_costs``). Index arrays are absolute into the arrays passed.
"""

import numpy as np
from numba import njit

INF = np.inf


@njit(cache=True, nogil=True)
def hungarian(cost):
    """Minimum-cost perfect assignment of a square matrix.

    Shortest augmenting path with row/column potentials, O(n^3).
    Returns ``col_of_row``.
    """
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[j]: row matched to column j (1-based, 0 = none)
    way = np.zeros(n + 1, dtype=np.int64)
    minv = np.empty(n + 1)
    used = np.empty(n + 1, dtype=np.bool_)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv[:] = INF
        used[:] = False
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = INF
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    col_of_row = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        col_of_row[p[j] - 1] = j - 1
    return col_of_row


@njit(cache=True, nogil=True)
def assignment_cost(cost):
    """Sum of ``cost`` over an optimal assignment, accumulated in row order."""
    n = cost.shape[0]
    if n == 0:
        return 0.0
    if n == 1:
        return cost[0, 0]
    if n == 2:
        a = cost[0, 0] + cost[1, 1]
        b = cost[0, 1] + cost[1, 0]
        return a if a <= b else b
    col = hungarian(cost)
    total = 0.0
    for i in range(n):
        total += cost[i, col[i]]
    return total


@njit(cache=True, nogil=True)
def _norm3(a, b):
    d0 = a[0] - b[0]
    d1 = a[1] - b[1]
    d2 = a[2] - b[2]
    return np.sqrt(d0 * d0 + d1 * d1 + d2 * d2)


@njit(cache=True, nogil=True)
def blank_costs(feat, first, nchild, depth, weights, L, lo, hi):
    """Distance of every subtree in ``[lo, hi)`` to a blank node, bottom-up."""
    out = np.zeros(hi - lo)
    zero = np.zeros(3)
    for i in range(hi - 1, lo - 1, -1):
        z = _norm3(feat[i], zero)
        k = nchild[i]
        if k > 0:
            s = 0.0
            for c in range(first[i], first[i] + k):
                s += out[c - lo]
            z += weights[L - depth[i] + 1] * s / k
        out[i - lo] = z
    return out


@njit(cache=True, nogil=True)
def _tree_pair_ws(fa, firsta, nca, deptha, blanka, lo_a, hi_a,
                  fb, firstb, ncb, depthb, blankb, lo_b, hi_b, weights, L, D, buf):
    """``tree_pair`` on caller-provided workspaces ``D`` (>= na x nb) and ``buf`` (>= k x k)."""
    for i in range(hi_a - 1, lo_a - 1, -1):
        di = deptha[i]
        for j in range(hi_b - 1, lo_b - 1, -1):
            if depthb[j] != di:
                continue
            d = _norm3(fa[i], fb[j])
            p = nca[i]
            q = ncb[j]
            n = p if p > q else q
            if n > 0:
                C = buf[:n, :n]
                for r in range(n):
                    for c in range(n):
                        if r < p and c < q:
                            C[r, c] = D[firsta[i] + r - lo_a, firstb[j] + c - lo_b]
                        elif r < p:
                            C[r, c] = blanka[firsta[i] + r]
                        elif c < q:
                            C[r, c] = blankb[firstb[j] + c]
                        else:
                            C[r, c] = 0.0
                d += weights[L - di + 1] * assignment_cost(C) / n
            D[i - lo_a, j - lo_b] = d
    return D[0, 0]


@njit(cache=True, nogil=True)
def _max_children(nc, lo, hi):
    k = 1
    for i in range(lo, hi):
        if nc[i] > k:
            k = nc[i]
    return k


@njit(cache=True, nogil=True)
def _max_tree(roots):
    m = 1
    for k in range(len(roots) - 1):
        if roots[k + 1] - roots[k] > m:
            m = roots[k + 1] - roots[k]
    return m


@njit(cache=True, nogil=True)
def tree_pair(fa, firsta, nca, deptha, blanka, lo_a, hi_a,
              fb, firstb, ncb, depthb, blankb, lo_b, hi_b, weights, L):
    """Layer-recursive tree distance between trees ``[lo_a, hi_a)`` and ``[lo_b, hi_b)``."""
    k = max(_max_children(nca, lo_a, hi_a), _max_children(ncb, lo_b, hi_b))
    D = np.zeros((hi_a - lo_a, hi_b - lo_b))
    buf = np.empty((k, k))
    return _tree_pair_ws(fa, firsta, nca, deptha, blanka, lo_a, hi_a,
                         fb, firstb, ncb, depthb, blankb, lo_b, hi_b, weights, L, D, buf)


@njit(cache=True, nogil=True)
def _scene_pair_ws(A, B, fa_idx, fb_idx, weights, L, lam_v2v, lam_v2n, D, buf):
    fa, firsta, nca, deptha, blanka, roots_a = A
    fb, firstb, ncb, depthb, blankb, roots_b = B
    total = 0.0
    for kind in range(2):
        lam = lam_v2v if kind == 0 else lam_v2n
        if lam == 0.0:
            continue
        ra = 2 * fa_idx + kind
        rb = 2 * fb_idx + kind
        d = _tree_pair_ws(fa, firsta, nca, deptha, blanka, roots_a[ra], roots_a[ra + 1],
                          fb, firstb, ncb, depthb, blankb, roots_b[rb], roots_b[rb + 1], weights, L, D, buf)
        total += lam * d
    return total


@njit(cache=True, nogil=True)
def scene_pair(A, B, fa_idx, fb_idx, weights, L, lam_v2v, lam_v2n):
    """Weighted V2V/V2N distance between frame ``fa_idx`` of A and ``fb_idx`` of B.

    ``A`` and ``B`` are the tuples produced by ``graph_dtw.encode_scenario``.
    """
    D = np.zeros((_max_tree(A[5]), _max_tree(B[5])))
    k = max(_max_children(A[2], 0, len(A[2])), _max_children(B[2], 0, len(B[2])))
    buf = np.empty((k, k))
    return _scene_pair_ws(A, B, fa_idx, fb_idx, weights, L, lam_v2v, lam_v2n, D, buf)


@njit(cache=True, nogil=True)
def band_limits(x, M, N, W):
    """Column range of row ``x`` inside the band ``|x(N-1) - y(M-1)| <= W max(M-1, N-1)``.

    The half-width ``W`` counts frames of the shorter sequence around the
    corner-to-corner diagonal; the cell set is the same for the transposed
    problem. ``W < 0`` means unbounded.
    """
    if W < 0 or M == 1 or N == 1:
        return 0, N - 1
    m = M - 1 if M > N else N - 1
    c = x * (N - 1)
    lo = c - W * m
    hi = c + W * m
    y0 = -((-lo) // (M - 1))  # ceil division
    y1 = hi // (M - 1)
    if y0 < 0:
        y0 = 0
    if y1 > N - 1:
        y1 = N - 1
    return y0, y1


@njit(cache=True, nogil=True)
def frame_matrix(A, B, M, N, W, weights, L, lam_v2v, lam_v2n):
    """Scene-distance matrix; cells outside the band stay inf (see ``band_limits``)."""
    out = np.full((M, N), INF)
    D = np.zeros((_max_tree(A[5]), _max_tree(B[5])))
    k = max(_max_children(A[2], 0, len(A[2])), _max_children(B[2], 0, len(B[2])))
    buf = np.empty((k, k))
    for x in range(M):
        y0, y1 = band_limits(x, M, N, W)
        for y in range(y0, y1 + 1):
            out[x, y] = _scene_pair_ws(A, B, x, y, weights, L, lam_v2v, lam_v2n, D, buf)
    return out


@njit(cache=True, nogil=True)
def dtw_accumulate(D):
    """Accumulated cost under the three-step recurrence; inf cells are impassable."""
    M, N = D.shape
    acc = np.full((M, N), INF)
    for x in range(M):
        for y in range(N):
            d = D[x, y]
            if not np.isfinite(d):
                continue
            if x == 0 and y == 0:
                acc[x, y] = d
                continue
            best = INF
            if x > 0 and y > 0 and acc[x - 1, y - 1] < best:
                best = acc[x - 1, y - 1]
            if x > 0 and acc[x - 1, y] < best:
                best = acc[x - 1, y]
            if y > 0 and acc[x, y - 1] < best:
                best = acc[x, y - 1]
            acc[x, y] = d + best
    return acc


@njit(cache=True, nogil=True)
def dtw_backtrack(acc):
    """Warping path from (M-1, N-1) back to (0, 0); ties prefer diagonal, then vertical, then horizontal."""
    M, N = acc.shape
    path = np.empty((M + N, 2), dtype=np.int64)
    x = M - 1
    y = N - 1
    k = 0
    path[k, 0] = x
    path[k, 1] = y
    while x > 0 or y > 0:
        diag = acc[x - 1, y - 1] if (x > 0 and y > 0) else INF
        vert = acc[x - 1, y] if x > 0 else INF
        horz = acc[x, y - 1] if y > 0 else INF
        if diag <= vert and diag <= horz:
            x -= 1
            y -= 1
        elif vert <= horz:
            x -= 1
        else:
            y -= 1
        k += 1
        path[k, 0] = x
        path[k, 1] = y
    return path[k::-1].copy()
