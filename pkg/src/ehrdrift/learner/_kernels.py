"""Compiled tree growing and traversal.

Feature values are pre-encoded as per-column integer codes into the sorted
distinct values of the training matrix, so split search never re-sorts
floats. Node randomness comes from a splitmix64 stream seeded per tree.
"""

import numpy as np
from numba import njit

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


@njit(cache=True)
def _splitmix(state):
    state = (state + np.uint64(0x9E3779B97F4A7C15)) & _MASK64
    z = state
    z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _MASK64
    z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _MASK64
    z = z ^ (z >> np.uint64(31))
    return state, z


@njit(cache=True)
def _randbelow(state, bound):
    # multiply-shift on the top 32 bits; bias is negligible for bound << 2**32
    state, z = _splitmix(state)
    r = ((z >> np.uint64(32)) * np.uint64(bound)) >> np.uint64(32)
    return state, np.int64(r)


@njit(cache=True)
def encode_columns(X):
    """Return (codes[d, n] int32, uniq values, offsets[d + 1], n_unique[d])."""
    n, d = X.shape
    codes = np.empty((d, n), dtype=np.int32)
    n_unique = np.empty(d, dtype=np.int64)
    uniq_buf = np.empty(n * d, dtype=np.float64)
    offsets = np.zeros(d + 1, dtype=np.int64)
    pos = 0
    for j in range(d):
        col = X[:, j].copy()
        order = np.argsort(col, kind="mergesort")
        k = -1
        prev = 0.0
        for r in range(n):
            i = order[r]
            v = col[i]
            if k < 0 or v != prev:
                k += 1
                uniq_buf[pos + k] = v
                prev = v
            codes[j, i] = k
        n_unique[j] = k + 1
        pos += k + 1
        offsets[j + 1] = pos
    return codes, uniq_buf[:pos].copy(), offsets, n_unique


@njit(cache=True)
def _insertion_sort(a):
    for i in range(1, a.shape[0]):
        v = a[i]
        j = i - 1
        while j >= 0 and a[j] > v:
            a[j + 1] = a[j]
            j -= 1
        a[j + 1] = v


@njit(cache=True)
def _score(n_l, p_l, n_r, p_r):
    # sum over children of (pos**2 + neg**2) / size; larger is purer
    q_l = n_l - p_l
    q_r = n_r - p_r
    return (p_l * p_l + q_l * q_l) / n_l + (p_r * p_r + q_r * q_r) / n_r


@njit(cache=True)
def grow_tree(codes, uniq, offsets, n_unique, y, rows, bootstrap, max_depth,
              min_leaf, n_candidates, seed):
    """Grow one tree on ``rows`` (indices into the encoded matrix).

    Returns node arrays (feature, threshold, left, right, value, count) where
    ``feature == -1`` marks a leaf. ``max_depth < 0`` means unbounded.
    """
    d = codes.shape[0]
    n = rows.shape[0]
    state = np.uint64(seed)

    samp = np.empty(n, dtype=np.int64)
    if bootstrap:
        for i in range(n):
            state, r = _randbelow(state, n)
            samp[i] = rows[r]
    else:
        for i in range(n):
            samp[i] = rows[i]

    cap = 2 * n + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap, dtype=np.float64)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap, dtype=np.float64)
    count = np.zeros(cap, dtype=np.int64)

    perm = np.arange(d)
    max_u = 1
    for j in range(d):
        if n_unique[j] > max_u:
            max_u = n_unique[j]
    tot = np.zeros(max_u, dtype=np.int64)
    pos = np.zeros(max_u, dtype=np.int64)
    keys = np.empty(n, dtype=np.int64)
    cand = np.empty(n_candidates, dtype=np.int64)

    # stack entries: node id, start, end, depth
    stack = np.empty((cap, 4), dtype=np.int64)
    top = 0
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = n
    stack[0, 3] = 0
    top = 1
    n_nodes = 1

    while top > 0:
        top -= 1
        node = stack[top, 0]
        start = stack[top, 1]
        end = stack[top, 2]
        depth = stack[top, 3]
        m = end - start
        p = 0
        for i in range(start, end):
            p += y[samp[i]]
        value[node] = p / m
        count[node] = m

        if (p == 0 or p == m or m < 2 * min_leaf
                or (max_depth >= 0 and depth >= max_depth)):
            continue

        # partial Fisher-Yates: candidate columns without replacement
        for i in range(n_candidates):
            state, r = _randbelow(state, d - i)
            jj = i + r
            tmp = perm[i]
            perm[i] = perm[jj]
            perm[jj] = tmp
            cand[i] = perm[i]
        cand.sort()

        parent = (p * p + (m - p) * (m - p)) / m
        best_score = parent + 1e-12 * m
        best_feat = -1
        best_code = -1
        best_thr = 0.0

        for ci in range(n_candidates):
            j = cand[ci]
            nu = n_unique[j]
            if nu < 2:
                continue
            off = offsets[j]
            if nu <= 4 * m:
                for i in range(start, end):
                    s = samp[i]
                    c = codes[j, s]
                    tot[c] += 1
                    pos[c] += y[s]
                n_l = 0
                p_l = 0
                prev = -1
                for c in range(nu):
                    if tot[c] == 0:
                        continue
                    if prev >= 0 and n_l >= min_leaf and m - n_l >= min_leaf:
                        sc = _score(n_l, p_l, m - n_l, p - p_l)
                        if sc > best_score:
                            best_score = sc
                            best_feat = j
                            best_code = prev
                            a = uniq[off + prev]
                            b = uniq[off + c]
                            best_thr = a + (b - a) / 2.0
                            if best_thr >= b:
                                best_thr = a
                    n_l += tot[c]
                    p_l += pos[c]
                    prev = c
                    if m - n_l < min_leaf:
                        break
                for i in range(start, end):
                    c = codes[j, samp[i]]
                    tot[c] = 0
                    pos[c] = 0
            else:
                k = 0
                for i in range(start, end):
                    s = samp[i]
                    keys[k] = np.int64(codes[j, s]) * 2 + y[s]
                    k += 1
                ks = keys[:m]
                if m <= 48:
                    _insertion_sort(ks)
                else:
                    ks.sort()
                n_l = 0
                p_l = 0
                i = 0
                prev = -1
                while i < m:
                    c = ks[i] >> 1
                    if prev >= 0 and n_l >= min_leaf and m - n_l >= min_leaf:
                        sc = _score(n_l, p_l, m - n_l, p - p_l)
                        if sc > best_score:
                            best_score = sc
                            best_feat = j
                            best_code = prev
                            a = uniq[off + prev]
                            b = uniq[off + c]
                            best_thr = a + (b - a) / 2.0
                            if best_thr >= b:
                                best_thr = a
                    while i < m and (ks[i] >> 1) == c:
                        n_l += 1
                        p_l += ks[i] & 1
                        i += 1
                    prev = c
                    if m - n_l < min_leaf:
                        break

        if best_feat < 0:
            continue

        # partition samp[start:end] so codes <= best_code come first
        lo = start
        hi = end - 1
        while lo <= hi:
            if codes[best_feat, samp[lo]] <= best_code:
                lo += 1
            else:
                tmp = samp[lo]
                samp[lo] = samp[hi]
                samp[hi] = tmp
                hi -= 1
        feature[node] = best_feat
        threshold[node] = best_thr
        l_id = n_nodes
        r_id = n_nodes + 1
        n_nodes += 2
        left[node] = l_id
        right[node] = r_id
        # right pushed first so the left subtree is expanded first
        stack[top, 0] = r_id
        stack[top, 1] = lo
        stack[top, 2] = end
        stack[top, 3] = depth + 1
        top += 1
        stack[top, 0] = l_id
        stack[top, 1] = start
        stack[top, 2] = lo
        stack[top, 3] = depth + 1
        top += 1

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(),
            left[:n_nodes].copy(), right[:n_nodes].copy(),
            value[:n_nodes].copy(), count[:n_nodes].copy())


@njit(cache=True)
def predict_forest(X, feature, threshold, left, right, value, roots):
    n = X.shape[0]
    n_trees = roots.shape[0]
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for t in range(n_trees):
            node = roots[t]
            while feature[node] >= 0:
                if X[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            acc += value[node]
        out[i] = acc / n_trees
    return out
