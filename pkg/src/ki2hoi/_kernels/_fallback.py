"""Pure-Python kernels; the Cython module ``_core`` mirrors these exactly."""
from __future__ import annotations

import numpy as np

_INF = float("inf")


def _shortest_augmenting(a):
    """Hungarian algorithm for an n x m list-of-lists cost with n <= m.

    Returns (row_to_col, u, v) where v <= 0 and u_i + v_j <= a[i][j], with
    equality on assigned pairs.
    """
    n = len(a)
    m = len(a[0]) if n else 0
    u = [0.0] * (n + 1)
    v = [0.0] * (m + 1)
    p = [0] * (m + 1)
    way = [0] * (m + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [_INF] * (m + 1)
        used = [False] * (m + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            row = a[i0 - 1]
            ui0 = u[i0]
            delta = _INF
            j1 = -1
            for j in range(1, m + 1):
                if not used[j]:
                    cur = row[j - 1] - ui0 - v[j]
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
    row_to_col = [-1] * n
    for j in range(1, m + 1):
        if p[j]:
            row_to_col[p[j] - 1] = j - 1
    return row_to_col, u[1:], v[1:]


def _tight_graph(cost, n_rows, n_cols, row_dual, col_dual, tol):
    """Equality graph of the zero-padded square problem, original orientation."""
    K = max(n_rows, n_cols)
    tight = np.zeros((K, K), dtype=bool)
    reduced = cost - row_dual[:, None] - col_dual[None, :]
    tight[:n_rows, :n_cols] = reduced <= tol
    # padding entries cost 0; their dual on the padded side is 0
    if n_rows < K:
        tight[n_rows:, :n_cols] = (-col_dual <= tol)[None, :]
    if n_cols < K:
        tight[:n_rows, n_cols:] = (-row_dual <= tol)[:, None]
    if n_rows < K and n_cols < K:
        tight[n_rows:, n_cols:] = True
    return tight


def _reroute(tight, match_row, owner, fixed_upto, start_row, target_col, banned_col, K):
    """Alternating path from ``start_row`` ending at ``target_col``.

    Rows below ``fixed_upto`` are frozen and ``banned_col`` is never entered.
    Returns the list of (row, new_col) moves or None.
    """
    visited = [False] * K
    visited[banned_col] = True
    # iterative DFS over (row, next-col-index)
    stack = [(start_row, 0)]
    path_cols = []
    while stack:
        row, j = stack[-1]
        advanced = False
        while j < K:
            c = j
            j += 1
            if visited[c] or not tight[row, c]:
                continue
            visited[c] = True
            if c == target_col:
                stack[-1] = (row, j)
                path_cols.append(c)
                return [(stack[k][0], path_cols[k]) for k in range(len(stack))]
            nxt = owner[c]
            if nxt < fixed_upto:
                continue
            stack[-1] = (row, j)
            path_cols.append(c)
            stack.append((nxt, 0))
            advanced = True
            break
        if not advanced:
            stack.pop()
            if path_cols:
                path_cols.pop()
    return None


def solve_assignment(cost, tol_scale: float = 1e-10):
    """Minimum-cost injective assignment with lexicographic tie-breaking.

    Returns ``(rows, cols)`` int64 arrays sorted by row.  Among optimal
    assignments the one with the lexicographically smallest sorted
    (row, col) list is chosen.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix contains NaN or infinite entries")
    N, M = cost.shape
    if N == 0 or M == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    tol = tol_scale * max(1.0, float(np.abs(cost).max()))
    K = max(N, M)
    match_row = [-1] * K
    if N <= M:
        r2c, u, v = _shortest_augmenting(cost.tolist())
        row_dual, col_dual = np.array(u), np.array(v)
        for i, j in enumerate(r2c):
            match_row[i] = j
    else:
        c2r, u, v = _shortest_augmenting(cost.T.tolist())
        row_dual, col_dual = np.array(v), np.array(u)
        for j, i in enumerate(c2r):
            match_row[i] = j
    owner = [-1] * K
    for i in range(K):
        if match_row[i] >= 0:
            owner[match_row[i]] = i
    free_cols = [c for c in range(K) if owner[c] < 0]
    for i in range(K):
        if match_row[i] < 0:
            c = free_cols.pop()
            match_row[i] = c
            owner[c] = i
    tight = _tight_graph(cost, N, M, row_dual, col_dual, tol)

    for r in range(N):
        current = match_row[r]
        limit = current if current < M else M
        for c in range(limit):
            if not tight[r, c]:
                continue
            r2 = owner[c]
            if r2 < r:
                continue
            moves = _reroute(tight, match_row, owner, r + 1, r2, current, c, K)
            if moves is None:
                continue
            match_row[r] = c
            owner[c] = r
            for row, col in moves:
                match_row[row] = col
                owner[col] = row
            break

    rows = [i for i in range(N) if match_row[i] < M]
    return np.array(rows, dtype=np.int64), np.array([match_row[i] for i in rows], dtype=np.int64)


def _box_iou(a, b):
    aw = a[2] - a[0]
    ah = a[3] - a[1]
    bw = b[2] - b[0]
    bh = b[3] - b[1]
    if aw <= 0 or ah <= 0 or bw <= 0 or bh <= 0:
        return 0.0
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (aw * ah + bw * bh - inter)


def greedy_pair_match(det_image, det_h, det_o, gt_image, gt_h, gt_o, threshold: float = 0.5):
    """TP flags for detections of one HOI class, given in descending score order.

    Each detection claims the unmatched same-image ground truth whose smaller
    of (human IoU, object IoU) is largest among those passing ``threshold``.
    """
    det_h = np.asarray(det_h, dtype=np.float64).tolist()
    det_o = np.asarray(det_o, dtype=np.float64).tolist()
    gt_h = np.asarray(gt_h, dtype=np.float64).tolist()
    gt_o = np.asarray(gt_o, dtype=np.float64).tolist()
    by_image: dict[int, list[int]] = {}
    for g, img in enumerate(np.asarray(gt_image, dtype=np.int64).tolist()):
        by_image.setdefault(img, []).append(g)
    used = [False] * len(gt_h)
    flags = np.zeros(len(det_h), dtype=bool)
    for k, img in enumerate(np.asarray(det_image, dtype=np.int64).tolist()):
        best, best_ov = -1, -1.0
        for g in by_image.get(img, ()):
            if used[g]:
                continue
            ih = _box_iou(det_h[k], gt_h[g])
            if ih < threshold:
                continue
            io = _box_iou(det_o[k], gt_o[g])
            if io < threshold:
                continue
            ov = min(ih, io)
            if ov > best_ov:
                best, best_ov = g, ov
        if best >= 0:
            used[best] = True
            flags[k] = True
    return flags
