"""Trace locality analysis: reuse distances and access-frequency skew.

Reuse distance here is the number of *distinct* ids touched strictly between
two consecutive accesses to the same id.  First touches are cold and reported
out of band (None) rather than as infinity, which keeps the histogram and any
downstream arithmetic integral.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .trace import Trace


class _Fenwick:
    """Prefix-sum tree over trace positions; supports point update, prefix query."""

    def __init__(self, n: int):
        self.n = n
        self.tree = [0] * (n + 1)

    def add(self, i: int, delta: int):
        i += 1
        while i <= self.n:
            self.tree[i] += delta
            i += i & (-i)

    def prefix(self, i: int) -> int:
        # sum over positions [0, i]
        i += 1
        s = 0
        while i > 0:
            s += self.tree[i]
            i -= i & (-i)
        return s


@dataclass
class ReuseDistanceReport:
    per_access: list[int | None]  # None marks a cold (first-touch) access
    histogram: dict[int, int]     # log2 bucket -> count, cold excluded
    cold_count: int


def _bucket(distance: int) -> int:
    # bucket 0 holds distance 0; bucket k>=1 holds [2^(k-1), 2^k)
    return distance.bit_length()


def reuse_distances(trace: Trace) -> ReuseDistanceReport:
    """Distinct-id reuse distance per access, plus a log2-bucket histogram.

    Classic one-pass algorithm: keep a marker at every id's latest position
    in a Fenwick tree; the distance for an access whose predecessor sits at
    p is the marker count strictly inside (p, i).  O(n log n).
    """
    gids = trace.gid_array
    n = len(gids)
    tree = _Fenwick(n)
    last_pos: dict[int, int] = {}
    per_access: list[int | None] = []
    histogram: dict[int, int] = {}
    cold = 0
    for i in range(n):
        gid = int(gids[i])
        p = last_pos.get(gid)
        if p is None:
            per_access.append(None)
            cold += 1
        else:
            d = tree.prefix(i - 1) - tree.prefix(p)
            per_access.append(d)
            histogram[_bucket(d)] = histogram.get(_bucket(d), 0) + 1
            tree.add(p, -1)
        tree.add(i, 1)
        last_pos[gid] = i
    return ReuseDistanceReport(per_access, histogram, cold)


def naive_reuse_distances(trace: Trace) -> list[int | None]:
    """Quadratic reference implementation; only sensible on short traces."""
    gids = [int(g) for g in trace.gid_array]
    last_pos: dict[int, int] = {}
    out: list[int | None] = []
    for i, gid in enumerate(gids):
        p = last_pos.get(gid)
        if p is None:
            out.append(None)
        else:
            out.append(len(set(gids[p + 1:i])))
        last_pos[gid] = i
    return out


def lru_hit_count(report: ReuseDistanceReport, capacity: int) -> int:
    """Hits a fully associative LRU cache of this capacity would score.

    An access hits exactly when its reuse distance is finite and below the
    capacity; this ties the analysis to the cache simulator and is asserted
    as an acceptance check.
    """
    return sum(1 for d in report.per_access if d is not None and d < capacity)


def frequency_cdf(trace: Trace) -> list[tuple[float, float]]:
    """Cumulative access share of ids ranked by descending popularity.

    Returns (rank_fraction, access_fraction) pairs ending at (1.0, 1.0).
    """
    if len(trace) == 0:
        raise ValueError("frequency_cdf of an empty trace")
    _, counts = np.unique(trace.gid_array, return_counts=True)
    counts = np.sort(counts)[::-1]
    u = counts.size
    cum = np.cumsum(counts) / counts.sum()
    ranks = np.arange(1, u + 1) / u
    return [(float(r), float(c)) for r, c in zip(ranks, cum)]


def write_reuse_histogram_csv(report: ReuseDistanceReport, path: str):
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["bucket", "distance_lo", "distance_hi_exclusive", "count"])
        for b in sorted(report.histogram):
            lo = 0 if b == 0 else 2 ** (b - 1)
            hi = 1 if b == 0 else 2 ** b
            w.writerow([b, lo, hi, report.histogram[b]])
        w.writerow(["cold", "", "", report.cold_count])


def write_frequency_cdf_csv(points: list[tuple[float, float]], path: str):
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["rank_fraction", "access_fraction"])
        for r, c in points:
            w.writerow([f"{r:.8f}", f"{c:.8f}"])
