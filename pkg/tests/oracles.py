"""Independent reference implementations used to verify the library.

Everything here is deliberately written in the most literal way possible
(explicit Python loops, no shared code with src/) so that agreement with
the library is meaningful evidence, not a tautology.
"""

import math

import numpy as np


def softmax_exact(v):
    """Max-subtracted softmax, scalar loop."""
    m = max(v)
    e = [math.exp(x - m) for x in v]
    s = sum(e)
    return [x / s for x in e]


def pool_by_summation(x, a):
    """m = sum_i a_i x_i with an explicit per-frame loop; x is (d, n)."""
    d, n = x.shape
    m = np.zeros(d)
    for i in range(n):
        m += a[i] * x[:, i]
    return m


def smooth_by_summation(a):
    return sum((a[i] - a[i + 1]) ** 2 for i in range(len(a) - 1))


def classifier_by_hand(m, fc1_w, fc1_b, fc2_w, fc2_b):
    """Step-by-step two-layer forward with scalar loops."""
    h = len(fc1_b)
    c = len(fc2_b)
    hidden = [max(0.0, sum(fc1_w[j][k] * m[k] for k in range(len(m))) + fc1_b[j])
              for j in range(h)]
    logits = [sum(fc2_w[i][j] * hidden[j] for j in range(h)) + fc2_b[i]
              for i in range(c)]
    probs = softmax_exact(logits)
    return hidden, logits, probs


def kernel_by_hand(x, y, sigma):
    sq = sum((float(a) - float(b)) ** 2 for a, b in zip(x, y))
    return math.exp(-sq / (2.0 * sigma * sigma))


def mmd2_triple_loop(t, u, sigma):
    """The three double sums, written out."""
    n_t, n_u = len(t), len(u)
    s = 0.0
    for i in range(n_t):
        for j in range(n_t):
            s += kernel_by_hand(t[i], t[j], sigma)
    total = s / (n_t * n_t)
    s = 0.0
    for i in range(n_u):
        for j in range(n_u):
            s += kernel_by_hand(u[i], u[j], sigma)
    total += s / (n_u * n_u)
    s = 0.0
    for i in range(n_t):
        for j in range(n_u):
            s += kernel_by_hand(t[i], u[j], sigma)
    total -= 2.0 * s / (n_t * n_u)
    return total


def median_pairwise_distance(points):
    dists = []
    n = len(points)
    for i in range(n):
        for j in range(i + 1, n):
            dists.append(math.sqrt(sum((float(a) - float(b)) ** 2
                                       for a, b in zip(points[i], points[j]))))
    med = float(np.median(dists))
    return med if med > 0 else 1.0


def iou_by_hand(a, b):
    lo = max(a[0], b[0])
    hi = min(a[1], b[1])
    inter = max(0.0, hi - lo)
    if inter == 0.0:
        return 0.0
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union


def ap_by_hand(detections, ground_truth, iou_thr):
    """Greedy confidence-descending AP with best-IoU matching, list based.

    detections: list of (video_id, t_start, t_end, confidence)
    ground_truth: list of (video_id, t_start, t_end)
    """
    n_gt = len(ground_truth)
    if n_gt == 0:
        return 0.0
    order = sorted(range(len(detections)),
                   key=lambda i: (-detections[i][3], detections[i][1]))
    used = [False] * n_gt
    ap = 0.0
    tp = 0
    for rank, i in enumerate(order):
        vid, lo, hi, _ = detections[i]
        best, best_iou = -1, 0.0
        for j, (gvid, glo, ghi) in enumerate(ground_truth):
            if used[j] or gvid != vid:
                continue
            ov = iou_by_hand((lo, hi), (glo, ghi))
            if ov > best_iou:
                best, best_iou = j, ov
        if best >= 0 and best_iou >= iou_thr:
            used[best] = True
            tp += 1
            ap += tp / (rank + 1)
    return ap / n_gt
