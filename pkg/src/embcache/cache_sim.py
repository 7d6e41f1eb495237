"""Cache replacement simulators over flat-id access sequences.

Online policies (LRU, LFU, SRRIP) run fully associative or set-associative;
the offline optimum (``simulate_optgen``) replays the classic farthest-next-
use eviction rule and also emits per-access keep decisions, which downstream
labeling consumes as caching ground truth.  ``brute_force_optimal`` is an
independent exhaustive oracle for tiny instances.
"""
from __future__ import annotations

import csv
import heapq
from collections import OrderedDict
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import InvalidConfigError
from .trace import Trace


class Policy(str, Enum):
    LRU = "lru"
    LFU = "lfu"
    SRRIP = "srrip"
    OPTGEN = "optgen"


@dataclass
class CacheConfig:
    """Capacity in blocks; ``ways=None`` means fully associative.

    For set-associative configs the set index is ``global_id % set_count``
    and ``ways`` must divide ``capacity``.
    """

    capacity: int
    policy: Policy = Policy.LRU
    ways: int | None = None
    srrip_max_rrpv: int = 3

    def validate(self):
        if self.capacity < 1:
            raise InvalidConfigError("capacity must be >= 1")
        if self.ways is not None:
            if self.ways < 1 or self.capacity % self.ways != 0:
                raise InvalidConfigError("ways must be >= 1 and divide capacity")
        if self.srrip_max_rrpv < 0:
            raise InvalidConfigError("srrip_max_rrpv must be >= 0")

    @property
    def set_count(self) -> int:
        return 1 if self.ways is None else self.capacity // self.ways

    @property
    def ways_per_set(self) -> int:
        return self.capacity if self.ways is None else self.ways


@dataclass
class SimResult:
    hits: int
    misses: int
    per_access_hit: list[int]
    keep_decisions: list[int] | None = None

    @property
    def hit_rate(self) -> float:
        total = self.hits + self.misses
        return self.hits / total if total else 0.0


def _gids_of(trace) -> np.ndarray:
    if isinstance(trace, Trace):
        return trace.gid_array
    return np.asarray(trace, dtype=np.int64)


def _next_use(gids: np.ndarray) -> np.ndarray:
    """next_use[i] = index of the next access to gids[i], or n if none."""
    n = len(gids)
    nxt = np.full(n, n, dtype=np.int64)
    seen: dict[int, int] = {}
    for i in range(n - 1, -1, -1):
        g = int(gids[i])
        nxt[i] = seen.get(g, n)
        seen[g] = i
    return nxt


def _simulate_lru(gids, capacity, set_count):
    sets = [OrderedDict() for _ in range(set_count)]
    per_access = []
    for g in gids:
        g = int(g)
        s = sets[g % set_count]
        if g in s:
            s.move_to_end(g)
            per_access.append(1)
        else:
            per_access.append(0)
            if len(s) == capacity:
                s.popitem(last=False)
            s[g] = True
    return per_access


def _simulate_lfu(gids, capacity, set_count):
    # Frequency counters live only while the block is resident; eviction
    # takes the least recently used block among the minimum-frequency ones.
    # Heap entries are (freq, tick, gid) with lazy invalidation.
    sets = [{} for _ in range(set_count)]          # gid -> [freq, tick]
    heaps: list[list] = [[] for _ in range(set_count)]
    per_access = []
    tick = 0
    for g in gids:
        g = int(g)
        si = g % set_count
        s, heap = sets[si], heaps[si]
        tick += 1
        if g in s:
            per_access.append(1)
            s[g][0] += 1
            s[g][1] = tick
            heapq.heappush(heap, (s[g][0], tick, g))
        else:
            per_access.append(0)
            if len(s) == capacity:
                while True:
                    freq, t, victim = heapq.heappop(heap)
                    if victim in s and s[victim] == [freq, t]:
                        del s[victim]
                        break
            s[g] = [1, tick]
            heapq.heappush(heap, (1, tick, g))
    return per_access


def _simulate_srrip(gids, capacity, set_count, max_rrpv):
    # 2-bit style re-reference prediction: insert at max-1 (floored at 0),
    # promote to 0 on hit, evict the first block at max in slot order,
    # aging every block when no victim is found.
    sets = [[None] * capacity for _ in range(set_count)]  # slots of [gid, rrpv]
    index = [{} for _ in range(set_count)]                # gid -> slot
    per_access = []
    insert_rrpv = max(0, max_rrpv - 1)
    for g in gids:
        g = int(g)
        si = g % set_count
        slots, idx = sets[si], index[si]
        slot = idx.get(g)
        if slot is not None:
            slots[slot][1] = 0
            per_access.append(1)
            continue
        per_access.append(0)
        free = next((j for j, b in enumerate(slots) if b is None), None)
        if free is None:
            while True:
                victim = next((j for j, b in enumerate(slots) if b[1] >= max_rrpv), None)
                if victim is not None:
                    break
                for b in slots:
                    b[1] += 1
            del idx[slots[victim][0]]
            free = victim
        slots[free] = [g, insert_rrpv]
        idx[g] = free
    return per_access


def _belady_positions(gids: np.ndarray, positions, capacity: int, nxt: np.ndarray,
                      per_access: list[int], hit_at: np.ndarray):
    """Farthest-next-use eviction over one (sub)sequence of trace positions.

    Ties only arise between blocks never used again; the smaller global id
    is evicted.  Heap entries are (-next_use, gid) with lazy invalidation.
    """
    resident: dict[int, int] = {}  # gid -> its current next-use position
    heap: list[tuple[int, int]] = []
    for i in positions:
        g = int(gids[i])
        nu = int(nxt[i])
        if g in resident:
            per_access[i] = 1
            hit_at[i] = True
        else:
            if len(resident) == capacity:
                while True:
                    neg_nu, victim = heapq.heappop(heap)
                    if resident.get(victim) == -neg_nu:
                        del resident[victim]
                        break
        resident[g] = nu
        heapq.heappush(heap, (-nu, g))


def simulate_optgen(trace, capacity: int) -> SimResult:
    """Offline-optimal replay with keep decisions for label generation.

    ``keep_decisions[i]`` is 1 exactly when the block touched at i stays
    resident until its next reference (equivalently: that next reference
    hits).  Final touches are labeled 0 since retention buys nothing.
    """
    if capacity < 1:
        raise InvalidConfigError("capacity must be >= 1")
    gids = _gids_of(trace)
    n = len(gids)
    nxt = _next_use(gids)
    per_access = [0] * n
    hit_at = np.zeros(n, dtype=bool)
    _belady_positions(gids, range(n), capacity, nxt, per_access, hit_at)
    keep = [0] * n
    for i in range(n):
        j = int(nxt[i])
        if j < n and hit_at[j]:
            keep[i] = 1
    hits = int(hit_at.sum())
    return SimResult(hits, n - hits, per_access, keep)


def simulate(trace, cfg: CacheConfig) -> SimResult:
    """Run one policy over the access sequence and count hits."""
    cfg.validate()
    gids = _gids_of(trace)
    set_count = cfg.set_count
    ways = cfg.ways_per_set

    if cfg.policy == Policy.OPTGEN:
        if set_count == 1:
            return simulate_optgen(gids, ways)
        # Per-set runs are independent little fully-associative caches.
        n = len(gids)
        nxt_global = _next_use(gids)
        per_access = [0] * n
        hit_at = np.zeros(n, dtype=bool)
        by_set: list[list[int]] = [[] for _ in range(set_count)]
        for i in range(n):
            by_set[int(gids[i]) % set_count].append(i)
        for positions in by_set:
            _belady_positions(gids, positions, ways, nxt_global, per_access, hit_at)
        keep = [0] * n
        for i in range(n):
            j = int(nxt_global[i])
            if j < n and hit_at[j]:
                keep[i] = 1
        hits = int(hit_at.sum())
        return SimResult(hits, n - hits, per_access, keep)

    if cfg.policy == Policy.LRU:
        per_access = _simulate_lru(gids, ways, set_count)
    elif cfg.policy == Policy.LFU:
        per_access = _simulate_lfu(gids, ways, set_count)
    elif cfg.policy == Policy.SRRIP:
        per_access = _simulate_srrip(gids, ways, set_count, cfg.srrip_max_rrpv)
    else:
        raise InvalidConfigError(f"unknown policy {cfg.policy}")
    hits = sum(per_access)
    return SimResult(hits, len(per_access) - hits, per_access)


_BRUTE_MAX_LEN = 14
_BRUTE_MAX_CAP = 4


def brute_force_optimal(trace, capacity: int) -> int:
    """Exact maximum hit count over every victim choice, by exhaustive search.

    Deliberately independent of the replay above: plain memoized DFS over
    (position, resident set).  Refuses instances beyond 14 accesses or
    capacity 4 to keep the state space honest.
    """
    gids = [int(g) for g in _gids_of(trace)]
    if len(gids) > _BRUTE_MAX_LEN or capacity > _BRUTE_MAX_CAP:
        raise InvalidConfigError(
            f"brute force bounded to {_BRUTE_MAX_LEN} accesses / capacity {_BRUTE_MAX_CAP}"
        )
    if capacity < 1:
        raise InvalidConfigError("capacity must be >= 1")
    n = len(gids)
    memo: dict[tuple[int, frozenset], int] = {}

    def best(i: int, resident: frozenset) -> int:
        if i == n:
            return 0
        key = (i, resident)
        got = memo.get(key)
        if got is not None:
            return got
        g = gids[i]
        if g in resident:
            val = 1 + best(i + 1, resident)
        elif len(resident) < capacity:
            val = best(i + 1, resident | {g})
        else:
            val = max(best(i + 1, (resident - {v}) | {g}) for v in resident)
        memo[key] = val
        return val

    return best(0, frozenset())


def sweep(trace, policies: list[Policy], capacities: list[int],
          ways: int | None = None) -> list[dict]:
    """Hit-rate grid over policy x capacity; rows feed the sweep CSV."""
    rows = []
    for policy in policies:
        for cap in capacities:
            w = ways if ways is not None and policy != Policy.OPTGEN else None
            cfg = CacheConfig(capacity=cap, policy=policy, ways=w)
            res = simulate(trace, cfg)
            rows.append({
                "policy": policy.value,
                "capacity": cap,
                "hits": res.hits,
                "misses": res.misses,
                "hit_rate": res.hit_rate,
            })
    return rows


def write_sweep_csv(rows: list[dict], path: str):
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["policy", "capacity", "hits", "misses", "hit_rate"])
        for r in rows:
            w.writerow([r["policy"], r["capacity"], r["hits"], r["misses"],
                        f"{r['hit_rate']:.6f}"])
