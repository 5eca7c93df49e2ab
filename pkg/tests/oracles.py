"""Slow, obviously-correct reference implementations used as test oracles."""

import math

import numpy as np


def brute_radius(points, query, radius):
    d2 = ((np.asarray(points) - np.asarray(query)) ** 2).sum(axis=1)
    return set(np.flatnonzero(d2 <= radius * radius).tolist())


def brute_propagate(queries, acc_points, labels, conf, d_prop, num_labels, num_dynamic, cutoff=0.5):
    """All-pairs vote using the sigma form of the Gaussian weight.

    Returns ``(labels, confidence, score)`` with ``(-1, 0, 0)`` for unassigned points.
    """
    sigma2 = (d_prop / math.sqrt(math.log(2.0))) ** 2
    m = len(queries)
    out_l = np.full(m, -1)
    out_c = np.zeros(m)
    out_s = np.zeros(m)
    for i in range(m):
        score = [0.0] * num_labels
        gsum = [0.0] * num_labels
        for j in range(len(acc_points)):
            if labels[j] < 0:
                continue
            d2 = float(((acc_points[j] - queries[i]) ** 2).sum())
            g = math.exp(-d2 / sigma2)
            w = g * conf[j]
            if w > cutoff:
                score[labels[j]] += w
                gsum[labels[j]] += g
        top = max(score)
        if top <= 0:
            continue
        best = score.index(top)  # first maximum = smallest label id
        if best < num_dynamic:
            continue
        out_l[i] = best
        out_c[i] = score[best] / gsum[best]
        out_s[i] = score[best]
    return out_l, out_c, out_s


def nearest_to_barycenter(points):
    c = points.mean(axis=0)
    d2 = ((points - c) ** 2).sum(axis=1)
    return int(np.argmin(d2))


def brute_iou(truth, pred, num_classes):
    """Per-class IoU from point lists; IGNORE (-1) truth is skipped, -1 predictions count as misses."""
    out = []
    for c in range(num_classes):
        tp = fp = fn = 0
        for t, p in zip(truth, pred):
            if t < 0:
                continue
            if t == c and p == c:
                tp += 1
            elif t == c:
                fn += 1
            elif p == c:
                fp += 1
        out.append(tp / (tp + fp + fn) if tp + fp + fn else float("nan"))
    return out
