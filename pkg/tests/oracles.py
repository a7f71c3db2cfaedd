"""Independent reference computations used by several test modules."""

from fractions import Fraction
from itertools import product


def rank_table(conf, mask):
    """Pixels sorted by descending confidence, ties broken by pixel index."""
    order = sorted(range(len(conf)), key=lambda i: (-conf[i], i))
    return [int(mask[i]) for i in order]


def exact_ap(conf, mask):
    """Mean of precision at every positive's rank, as an exact fraction."""
    ranked = rank_table(conf, mask)
    total = sum(ranked)
    if total == 0:
        return None
    hits, acc = 0, Fraction(0)
    for k, rel in enumerate(ranked, start=1):
        if rel:
            hits += 1
            acc += Fraction(hits, k)
    return acc / total


def exact_aupr(conf, mask):
    """Step integral of precision over recall increments, exact."""
    ranked = rank_table(conf, mask)
    total = sum(ranked)
    if total == 0:
        return None
    tp, prev_recall, area = 0, Fraction(0), Fraction(0)
    for k, rel in enumerate(ranked, start=1):
        tp += rel
        recall = Fraction(tp, total)
        area += Fraction(tp, k) * (recall - prev_recall)
        prev_recall = recall
    return area


def all_masks(n):
    return product((0, 1), repeat=n)


def hand_cl_metrics(a):
    """LA, AA, F, BWT, FWT written out directly from their definitions."""
    n = len(a)
    la = sum(a[t][t] for t in range(n)) / n
    aa = sum(a[n - 1][k] for k in range(n)) / n
    f = sum(max(a[t][k] for t in range(k, n)) - a[n - 1][k] for k in range(n - 1)) / (n - 1)
    bwt = sum(a[n - 1][k] - a[k][k] for k in range(n - 1)) / (n - 1)
    fwt = sum(a[k - 1][k] for k in range(1, n)) / (n - 1)
    return la, aa, f, bwt, fwt


LCM_16 = 720720  # lcm(1..16): every precision hits/k is an integer multiple of 1/LCM_16


def exact_ap_all_masks(conf):
    """Exact AP of every binary mask over ``conf`` as integer pairs (num, den).

    Returns ``masks (2^n, n)``, ``num`` and ``den`` with AP = num / den; masks
    without positives get ``den == 0``.
    """
    import numpy as np

    n = len(conf)
    assert n <= 16
    order = sorted(range(n), key=lambda i: (-conf[i], i))
    codes = np.arange(2 ** n, dtype=np.int64)
    masks = ((codes[:, None] >> np.arange(n)) & 1).astype(np.int64)
    ranked = masks[:, order]
    hits = np.cumsum(ranked, axis=1)
    weights = LCM_16 // np.arange(1, n + 1)
    num = (ranked * hits * weights).sum(axis=1)
    den = LCM_16 * ranked.sum(axis=1)
    return masks, num, den
