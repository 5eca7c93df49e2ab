"""Pure-numpy implementations of the hot kernels.

Both this module and the compiled ``_kernels`` extension expose the same
functions with the same argument order. Points arrive sorted by linearized
voxel key (see ``VoxelGrid``); returned point indices refer to that sorted
order.
"""

import math

import numpy as np

LN2 = math.log(2.0)
# Cell-rejection slack, relative to the voxel size. Only ever widens the
# candidate set; the exact distance test decides membership.
_EPS = 1e-9
_CHUNK = 16384


def _ranges(lo, hi):
    lengths = hi - lo
    total = int(lengths.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64), lengths
    starts = np.cumsum(lengths) - lengths
    return np.arange(total, dtype=np.int64) - np.repeat(starts - lo, lengths), lengths


def _candidate_pairs(sorted_points, sorted_lin, kmin, dims, vs, queries, radius):
    """Yield (query ids, point ids, squared distances) of all pairs within radius."""
    r2 = radius * radius
    eps = _EPS * vs
    reach = int(math.ceil(radius / vs)) + 1
    qk = np.floor(queries / vs).astype(np.int64)
    zmin, zmax = kmin[2], kmin[2] + dims[2] - 1
    qids = np.arange(len(queries), dtype=np.int64)
    for dx in range(-reach, reach + 1):
        kx = qk[:, 0] + dx
        x0 = kx * vs
        ex = np.maximum(np.maximum(x0 - queries[:, 0], queries[:, 0] - (x0 + vs)) - eps, 0.0)
        okx = (ex * ex <= r2) & (kx >= kmin[0]) & (kx < kmin[0] + dims[0])
        if not okx.any():
            continue
        for dy in range(-reach, reach + 1):
            ky = qk[:, 1] + dy
            y0 = ky * vs
            ey = np.maximum(np.maximum(y0 - queries[:, 1], queries[:, 1] - (y0 + vs)) - eps, 0.0)
            dxy2 = ex * ex + ey * ey
            ok = okx & (dxy2 <= r2) & (ky >= kmin[1]) & (ky < kmin[1] + dims[1])
            if not ok.any():
                continue
            q = qids[ok]
            dz = np.sqrt(r2 - dxy2[ok])
            qz = queries[q, 2]
            kz_lo = np.maximum(np.floor((qz - dz - eps) / vs).astype(np.int64), zmin)
            kz_hi = np.minimum(np.floor((qz + dz + eps) / vs).astype(np.int64), zmax)
            valid = kz_lo <= kz_hi
            if not valid.any():
                continue
            q, kz_lo, kz_hi = q[valid], kz_lo[valid], kz_hi[valid]
            base = ((kx[q] - kmin[0]) * dims[1] + (ky[q] - kmin[1])) * dims[2] - kmin[2]
            lo = np.searchsorted(sorted_lin, base + kz_lo, side="left")
            hi = np.searchsorted(sorted_lin, base + kz_hi, side="right")
            cand, lengths = _ranges(lo, hi)
            if len(cand) == 0:
                continue
            qq = np.repeat(q, lengths)
            d = sorted_points[cand] - queries[qq]
            d2 = d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]
            keep = d2 <= r2
            yield qq[keep], cand[keep], d2[keep]


def radius_query(sorted_points, sorted_lin, kmin, dims, vs, queries, radius):
    m = len(queries)
    if len(sorted_points) == 0 or m == 0:
        return np.zeros(m + 1, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0)
    parts = list(_candidate_pairs(sorted_points, sorted_lin, kmin, dims, vs, queries, radius))
    if not parts:
        return np.zeros(m + 1, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0)
    q = np.concatenate([p[0] for p in parts])
    idx = np.concatenate([p[1] for p in parts])
    d2 = np.concatenate([p[2] for p in parts])
    order = np.argsort(q, kind="stable")
    offsets = np.zeros(m + 1, dtype=np.int64)
    np.cumsum(np.bincount(q, minlength=m), out=offsets[1:])
    return offsets, idx[order], d2[order]


def propagate(sorted_points, sorted_lin, kmin, dims, vs, sorted_labels, sorted_conf,
              queries, d_prop, cutoff, num_labels, num_dynamic):
    """Distance- and confidence-weighted static label vote for every query.

    Returns ``(labels, confidence, score)`` where ``score`` is the summed
    weight of the winning label; unassigned queries get ``(-1, 0.0, 0.0)``.
    """
    m = len(queries)
    out_labels = np.full(m, -1, dtype=np.int32)
    out_conf = np.zeros(m, dtype=np.float64)
    out_score = np.zeros(m, dtype=np.float64)
    if len(sorted_points) == 0 or m == 0:
        return out_labels, out_conf, out_score
    dprop2 = d_prop * d_prop
    k = num_labels
    for start in range(0, m, _CHUNK):
        sub = queries[start:start + _CHUNK]
        n = len(sub)
        score = np.zeros(n * k)
        gsum = np.zeros(n * k)
        for q, i, d2 in _candidate_pairs(sorted_points, sorted_lin, kmin, dims, vs, sub, d_prop):
            lab = sorted_labels[i]
            g = np.exp(-(d2 / dprop2) * LN2)
            w = g * sorted_conf[i]
            keep = (lab >= 0) & (w > cutoff)
            if not keep.any():
                continue
            slot = q[keep] * k + lab[keep]
            score += np.bincount(slot, weights=w[keep], minlength=n * k)
            gsum += np.bincount(slot, weights=g[keep], minlength=n * k)
        score = score.reshape(n, k)
        gsum = gsum.reshape(n, k)
        best = np.argmax(score, axis=1)
        rows = np.arange(n)
        top = score[rows, best]
        assign = (top > 0) & (best >= num_dynamic)
        out_labels[start:start + n][assign] = best[assign]
        out_conf[start:start + n][assign] = top[assign] / gsum[rows, best][assign]
        out_score[start:start + n][assign] = top[assign]
    return out_labels, out_conf, out_score
