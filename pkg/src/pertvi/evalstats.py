"""Ranking metrics and the one-sided Mann-Whitney test.

Ties use midranks throughout. AUPR is average precision with tied scores
grouped: precision is evaluated only after a whole tie group is admitted.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

EXACT_MAX_TOTAL = 16


class UndefinedMetricError(ValueError):
    pass


def midranks(x) -> np.ndarray:
    """1-based ranks with ties replaced by their average rank."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(len(x))
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _check(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if len(s) != len(y) or len(s) < 2:
        raise UndefinedMetricError("scores and labels must be parallel with length >= 2")
    if not np.isin(y, (0, 1)).all():
        raise UndefinedMetricError("labels must be binary")
    return s, y.astype(bool)


def mann_whitney_u(a, b) -> float:
    """U statistic counting pairs with b > a (ties count one half)."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    r = midranks(np.concatenate([a, b]))
    return float(r[len(a):].sum() - len(b) * (len(b) + 1) / 2.0)


def auroc(scores, labels) -> float:
    s, y = _check(scores, labels)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs both classes")
    return mann_whitney_u(s[~y], s[y]) / (n_pos * n_neg)


def aupr(scores, labels) -> float:
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise UndefinedMetricError("AUPR needs at least one positive")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    # last index of each tie group in descending order
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(y)[ends]
    k = ends + 1
    gained = np.diff(np.r_[0, tp])
    return float(np.sum(gained * (tp / k)) / n_pos)


def spearman_rho(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if len(a) != len(b) or len(a) < 3:
        raise UndefinedMetricError("Spearman needs two equal-length samples of size >= 3")
    ra, rb = midranks(a), midranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    den = math.sqrt(float(ra @ ra) * float(rb @ rb))
    if den == 0:
        raise UndefinedMetricError("zero rank variance")
    return float(np.clip((ra @ rb) / den, -1.0, 1.0))


def mann_whitney_one_sided(a, b) -> float:
    """p-value for H1: b is stochastically larger than a.

    Exact enumeration over all relabelings of the pooled sample when the total
    size is at most 16, else the tie-corrected normal approximation with
    continuity correction.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    na, nb = len(a), len(b)
    if na == 0 or nb == 0:
        raise ValueError("both samples must be nonempty")
    u = mann_whitney_u(a, b)
    n = na + nb
    if n <= EXACT_MAX_TOTAL:
        r = midranks(np.concatenate([a, b]))
        offset = nb * (nb + 1) / 2.0
        hits = total = 0
        for idx in itertools.combinations(range(n), nb):
            total += 1
            if r[list(idx)].sum() - offset >= u - 1e-9:
                hits += 1
        return hits / total
    _, counts = np.unique(np.concatenate([a, b]), return_counts=True)
    tie = float(np.sum(counts ** 3 - counts)) / (n * (n - 1))
    var = na * nb / 12.0 * ((n + 1) - tie)
    if var <= 0:
        return 1.0
    z = (u - na * nb / 2.0 - 0.5) / math.sqrt(var)
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def relative_change(value: float, baseline: float) -> float:
    """Percent change 100 * (value - baseline) / baseline."""
    return 100.0 * (value - baseline) / baseline
