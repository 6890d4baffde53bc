"""Pure numpy versions of the compiled tree kernels."""
import numpy as np


def bucket_sums(bins, g, h, rows, n_buckets):
    b = np.asarray(bins)[rows]
    gs = np.bincount(b, weights=np.asarray(g)[rows], minlength=n_buckets).astype(float)
    hs = np.bincount(b, weights=np.asarray(h)[rows], minlength=n_buckets).astype(float)
    return gs, hs


def best_split(gs, hs, lam, min_child):
    gs = np.asarray(gs, dtype=float)
    hs = np.asarray(hs, dtype=float)
    gt, ht = gs.sum(), hs.sum()
    gl = np.cumsum(gs)[:-1]
    hl = np.cumsum(hs)[:-1]
    gr, hr = gt - gl, ht - hl
    gain = 0.5 * (gl ** 2 / (hl + lam) + gr ** 2 / (hr + lam) - gt ** 2 / (ht + lam))
    gain[(hl < min_child) | (hr < min_child)] = -np.inf
    if gain.size == 0:
        return -1, 0.0
    b = int(np.argmax(gain))   # first maximum, like the compiled scan
    if not gain[b] > 0.0:
        return -1, 0.0
    return b, float(gain[b])


def leaf_ids(x, feature, threshold, left, right):
    x = np.asarray(x, dtype=float)
    node = np.zeros(x.shape[0], dtype=np.int32)
    active = feature[node] >= 0
    rows = np.arange(x.shape[0])
    while active.any():
        idx = rows[active]
        cur = node[idx]
        go_left = x[idx, feature[cur]] <= threshold[cur]
        node[idx] = np.where(go_left, left[cur], right[cur])
        active = feature[node] >= 0
    return node
