# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled assignment and detection-matching kernels."""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY, fabs

cnp.import_array()


cdef void _hungarian(double[:, ::1] a, Py_ssize_t n, Py_ssize_t m,
                     Py_ssize_t[::1] row_to_col, double[::1] u_out, double[::1] v_out):
    # n <= m; 1-indexed potentials as in the textbook shortest-augmenting-path form
    cdef double[::1] u = np.zeros(n + 1)
    cdef double[::1] v = np.zeros(m + 1)
    cdef Py_ssize_t[::1] p = np.zeros(m + 1, dtype=np.intp)
    cdef Py_ssize_t[::1] way = np.zeros(m + 1, dtype=np.intp)
    cdef double[::1] minv = np.empty(m + 1)
    cdef cnp.uint8_t[::1] used = np.empty(m + 1, dtype=np.uint8)
    cdef Py_ssize_t i, j, i0, j0, j1
    cdef double delta, cur, ui0
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        for j in range(m + 1):
            minv[j] = INFINITY
            used[j] = 0
        while True:
            used[j0] = 1
            i0 = p[j0]
            ui0 = u[i0]
            delta = INFINITY
            j1 = -1
            for j in range(1, m + 1):
                if not used[j]:
                    cur = a[i0 - 1, j - 1] - ui0 - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
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
    for i in range(n):
        row_to_col[i] = -1
    for j in range(1, m + 1):
        if p[j]:
            row_to_col[p[j] - 1] = j - 1
    for i in range(n):
        u_out[i] = u[i + 1]
    for j in range(m):
        v_out[j] = v[j + 1]


cdef bint _reroute(cnp.uint8_t[:, ::1] tight, Py_ssize_t[::1] match_row, Py_ssize_t[::1] owner,
                   Py_ssize_t fixed_upto, Py_ssize_t start_row, Py_ssize_t target_col,
                   Py_ssize_t banned_col, Py_ssize_t K,
                   cnp.uint8_t[::1] visited, Py_ssize_t[::1] st_row, Py_ssize_t[::1] st_j,
                   Py_ssize_t[::1] path_cols):
    cdef Py_ssize_t depth, row, j, c, nxt, k
    cdef bint advanced
    for k in range(K):
        visited[k] = 0
    visited[banned_col] = 1
    depth = 1
    st_row[0] = start_row
    st_j[0] = 0
    while depth > 0:
        row = st_row[depth - 1]
        j = st_j[depth - 1]
        advanced = False
        while j < K:
            c = j
            j += 1
            if visited[c] or not tight[row, c]:
                continue
            visited[c] = 1
            if c == target_col:
                path_cols[depth - 1] = c
                for k in range(depth):
                    match_row[st_row[k]] = path_cols[k]
                    owner[path_cols[k]] = st_row[k]
                return True
            nxt = owner[c]
            if nxt < fixed_upto:
                continue
            st_j[depth - 1] = j
            path_cols[depth - 1] = c
            st_row[depth] = nxt
            st_j[depth] = 0
            depth += 1
            advanced = True
            break
        if not advanced:
            depth -= 1
    return False


def solve_assignment(cost, double tol_scale=1e-10):
    """Minimum-cost injective assignment with lexicographic tie-breaking."""
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix contains NaN or infinite entries")
    cdef Py_ssize_t N = cost.shape[0], M = cost.shape[1]
    if N == 0 or M == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    cdef double tol = tol_scale * max(1.0, float(np.abs(cost).max()))
    cdef Py_ssize_t K = max(N, M)
    cdef double[:, ::1] c = cost
    cdef Py_ssize_t[::1] match_row = np.full(K, -1, dtype=np.intp)
    cdef Py_ssize_t[::1] owner = np.full(K, -1, dtype=np.intp)
    cdef double[::1] row_dual = np.zeros(N)
    cdef double[::1] col_dual = np.zeros(M)
    cdef Py_ssize_t i, j, r, r2, current, limit, free_ptr
    if N <= M:
        _hungarian(c, N, M, match_row[:N], row_dual, col_dual)
    else:
        ct = np.ascontiguousarray(cost.T)
        c2r = np.full(M, -1, dtype=np.intp)
        _hungarian(ct, M, N, c2r, col_dual, row_dual)
        for j in range(M):
            match_row[c2r[j]] = j
    for i in range(K):
        if match_row[i] >= 0:
            owner[match_row[i]] = i
    free_ptr = K - 1
    for i in range(K):
        if match_row[i] < 0:
            while owner[free_ptr] >= 0:
                free_ptr -= 1
            match_row[i] = free_ptr
            owner[free_ptr] = i

    cdef cnp.uint8_t[:, ::1] tight = np.zeros((K, K), dtype=np.uint8)
    for i in range(N):
        for j in range(M):
            tight[i, j] = c[i, j] - row_dual[i] - col_dual[j] <= tol
        for j in range(M, K):
            tight[i, j] = -row_dual[i] <= tol
    for i in range(N, K):
        for j in range(M):
            tight[i, j] = -col_dual[j] <= tol
        for j in range(M, K):
            tight[i, j] = 1

    cdef cnp.uint8_t[::1] visited = np.zeros(K, dtype=np.uint8)
    cdef Py_ssize_t[::1] st_row = np.zeros(K + 1, dtype=np.intp)
    cdef Py_ssize_t[::1] st_j = np.zeros(K + 1, dtype=np.intp)
    cdef Py_ssize_t[::1] path_cols = np.zeros(K + 1, dtype=np.intp)
    for r in range(N):
        current = match_row[r]
        limit = current if current < M else M
        for j in range(limit):
            if not tight[r, j]:
                continue
            r2 = owner[j]
            if r2 < r:
                continue
            if _reroute(tight, match_row, owner, r + 1, r2, current, j, K,
                        visited, st_row, st_j, path_cols):
                match_row[r] = j
                owner[j] = r
                break

    rows = [i for i in range(N) if match_row[i] < M]
    return (np.array(rows, dtype=np.int64),
            np.array([match_row[i] for i in rows], dtype=np.int64))


cdef inline double _box_iou(double[:, ::1] a, Py_ssize_t ia, double[:, ::1] b, Py_ssize_t ib) nogil:
    cdef double aw = a[ia, 2] - a[ia, 0]
    cdef double ah = a[ia, 3] - a[ia, 1]
    cdef double bw = b[ib, 2] - b[ib, 0]
    cdef double bh = b[ib, 3] - b[ib, 1]
    cdef double iw, ih, inter
    if aw <= 0 or ah <= 0 or bw <= 0 or bh <= 0:
        return 0.0
    iw = min(a[ia, 2], b[ib, 2]) - max(a[ia, 0], b[ib, 0])
    ih = min(a[ia, 3], b[ib, 3]) - max(a[ia, 1], b[ib, 1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (aw * ah + bw * bh - inter)


def greedy_pair_match(det_image, det_h, det_o, gt_image, gt_h, gt_o, double threshold=0.5):
    """TP flags for detections of one HOI class, given in descending score order."""
    cdef cnp.int64_t[::1] dimg = np.ascontiguousarray(det_image, dtype=np.int64)
    cdef cnp.int64_t[::1] gimg = np.ascontiguousarray(gt_image, dtype=np.int64)
    cdef double[:, ::1] dh = np.ascontiguousarray(det_h, dtype=np.float64).reshape(-1, 4)
    cdef double[:, ::1] do = np.ascontiguousarray(det_o, dtype=np.float64).reshape(-1, 4)
    cdef double[:, ::1] gh = np.ascontiguousarray(gt_h, dtype=np.float64).reshape(-1, 4)
    cdef double[:, ::1] go = np.ascontiguousarray(gt_o, dtype=np.float64).reshape(-1, 4)
    cdef Py_ssize_t K = dh.shape[0], G = gh.shape[0], k, j, g, best
    cdef double ih, io, ov, best_ov
    # bucket ground truth by image; a stable sort keeps index order inside each bucket
    order_arr = np.argsort(np.asarray(gimg), kind="stable").astype(np.int64)
    sorted_img = np.asarray(gimg)[order_arr]
    cdef cnp.int64_t[::1] order = order_arr
    cdef cnp.int64_t[::1] lo = np.searchsorted(sorted_img, np.asarray(dimg), side="left").astype(np.int64)
    cdef cnp.int64_t[::1] hi = np.searchsorted(sorted_img, np.asarray(dimg), side="right").astype(np.int64)
    flags_arr = np.zeros(K, dtype=bool)
    cdef cnp.uint8_t[::1] flags = flags_arr.view(np.uint8)
    cdef cnp.uint8_t[::1] used = np.zeros(G, dtype=np.uint8)
    with nogil:
        for k in range(K):
            best = -1
            best_ov = -1.0
            for j in range(lo[k], hi[k]):
                g = order[j]
                if used[g]:
                    continue
                ih = _box_iou(dh, k, gh, g)
                if ih < threshold:
                    continue
                io = _box_iou(do, k, go, g)
                if io < threshold:
                    continue
                ov = min(ih, io)
                if ov > best_ov:
                    best = g
                    best_ov = ov
            if best >= 0:
                used[best] = 1
                flags[k] = 1
    return flags_arr
