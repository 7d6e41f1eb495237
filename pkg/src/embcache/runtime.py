"""Serving runtime: a priority-managed fast buffer fed by the two models.

Every access is served from the buffer (hit) or from slow memory (demand
load).  After each input chunk the caching model's keep bits refresh the
priorities of the chunk's rows and the prefetch model's predicted rows are
pulled in ahead of use.  Eviction picks the minimum-priority entry and ages
everything else by one, so stale rows drain out at a configurable speed.

Hits split into cache hits and prefetch hits: a prefetch hit is the first
reference to a row whose presence was caused by a prefetch insert.  The tag
clears on that reference; later hits on the same row count as cache hits.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .cache_sim import CacheConfig, Policy, simulate, simulate_optgen
from .errors import InvalidConfigError, VocabularyMismatchError
from .neural.model import (ModelParameters, decode_indices,
                           forward_caching_batch, forward_prefetch_batch)
from .trace import Trace, chunk

EVICTION_SPEED = 4


@dataclass
class BufferConfig:
    capacity: int
    eviction_speed: int = EVICTION_SPEED

    def validate(self):
        if self.capacity < 1:
            raise InvalidConfigError("buffer capacity must be >= 1")
        if self.eviction_speed < 1:
            raise InvalidConfigError("eviction_speed must be >= 1")


class PriorityBuffer:
    """Fixed-capacity id buffer with integer priorities and prefetch tags.

    Backed by flat arrays indexed by global id so eviction scans are
    vectorized; the canonical scan order is ascending global id.
    """

    def __init__(self, capacity: int, total_ids: int, eviction_speed: int = EVICTION_SPEED):
        if capacity < 1:
            raise InvalidConfigError("buffer capacity must be >= 1")
        self.capacity = capacity
        self.eviction_speed = eviction_speed
        self._priority = np.zeros(total_ids, dtype=np.int64)
        self._resident = np.zeros(total_ids, dtype=bool)
        self._prefetch_tag = np.zeros(total_ids, dtype=bool)
        self._count = 0

    def __len__(self) -> int:
        return self._count

    def __contains__(self, gid: int) -> bool:
        return bool(self._resident[gid])

    @property
    def full(self) -> bool:
        return self._count >= self.capacity

    def priority_of(self, gid: int) -> int:
        if not self._resident[gid]:
            raise KeyError(gid)
        return int(self._priority[gid])

    @property
    def entries(self) -> dict[int, int]:
        ids = np.nonzero(self._resident)[0]
        return {int(g): int(self._priority[g]) for g in ids}

    def set_priority(self, gid: int, priority: int):
        if not self._resident[gid]:
            raise KeyError(gid)
        self._priority[gid] = priority

    def add(self, gid: int, priority: int, prefetched: bool = False):
        if self._resident[gid]:
            raise ValueError(f"id {gid} already resident")
        if self.full:
            raise ValueError("buffer full; evict before inserting")
        self._resident[gid] = True
        self._priority[gid] = priority
        self._prefetch_tag[gid] = prefetched
        self._count += 1

    def reference(self, gid: int) -> bool:
        """Clear the prefetch tag; True when this was the tag's first hit."""
        if self._prefetch_tag[gid]:
            self._prefetch_tag[gid] = False
            return True
        return False

    def populate(self) -> int:
        """Evict the minimum-priority entry (first in ascending-gid order on
        ties), aging every resident priority by 1 floored at zero."""
        if self._count == 0:
            raise ValueError("cannot evict from an empty buffer")
        masked = np.where(self._resident, self._priority, np.iinfo(np.int64).max)
        victim = int(np.argmin(masked))
        np.subtract(self._priority, 1, out=self._priority,
                    where=self._resident & (self._priority > 0))
        self._resident[victim] = False
        self._prefetch_tag[victim] = False
        self._count -= 1
        return victim


def load_embeddings(buf: PriorityBuffer, chunk_gids: list[int], cache_bits: list[int],
                    prefetch_gids: list[int]):
    """Apply one chunk's model outputs to the buffer.

    Chunk rows get priority ``keep_bit + eviction_speed``; rows the chunk
    itself already evicted are skipped.  Prefetched rows are inserted (with
    eviction as needed) at priority ``eviction_speed`` and tagged; an
    already-resident prefetch target just has its priority reset.
    """
    if len(chunk_gids) != len(cache_bits):
        raise ValueError("one cache bit per chunk access required")
    for gid, bit in zip(chunk_gids, cache_bits):
        if bit not in (0, 1):
            raise ValueError("cache bits must be 0/1")
        if gid in buf:
            buf.set_priority(gid, bit + buf.eviction_speed)
    for gid in prefetch_gids:
        if gid in buf:
            buf.set_priority(gid, buf.eviction_speed)
            continue
        if buf.full:
            buf.populate()
        buf.add(gid, buf.eviction_speed, prefetched=True)


def gpu_buffer_populate(buf: PriorityBuffer) -> int:
    return buf.populate()


def coverage(predicted_ids, ground_truth_ids) -> float:
    """Share of the distinct ground-truth ids the prediction set touched."""
    gt = set(int(g) for g in ground_truth_ids)
    if not gt:
        raise ValueError("coverage needs a non-empty ground truth")
    pred = set(int(g) for g in predicted_ids)
    return len(pred & gt) / len(gt)


@dataclass
class BreakdownReport:
    """Where every access was served from, plus prefetcher quality."""

    cache_hits: int = 0
    prefetch_hits: int = 0
    on_demand: int = 0
    prefetch_issued: int = 0
    prefetch_useful: int = 0
    coverage: float = 0.0

    @property
    def total(self) -> int:
        return self.cache_hits + self.prefetch_hits + self.on_demand

    @property
    def hits(self) -> int:
        return self.cache_hits + self.prefetch_hits

    @property
    def hit_rate(self) -> float:
        return self.hits / self.total if self.total else 0.0

    @property
    def correctness(self) -> float:
        return self.prefetch_useful / self.prefetch_issued if self.prefetch_issued else 0.0


def _model_bits(caching_params, caching_fn, samples, batch_size=256):
    if caching_fn is not None:
        return [list(caching_fn(s)) for s in samples]
    if caching_params is None:
        return [[0] * len(s.input) for s in samples]
    bits = []
    for lo in range(0, len(samples), batch_size):
        part = samples[lo:lo + batch_size]
        gid = np.array([[a.global_id for a in s.input] for s in part])
        tid = np.array([[a.table_id for a in s.input] for s in part])
        probs = forward_caching_batch(caching_params, gid, tid).value
        bits.extend((row >= 0.5).astype(int).tolist() for row in probs)
    return bits


def _model_prefetches(prefetch_params, prefetch_fn, samples, table_sizes,
                      batch_size=256):
    if prefetch_fn is not None:
        return [[int(g) for g in prefetch_fn(s)] for s in samples]
    if prefetch_params is None:
        return [[] for _ in samples]
    out = []
    for lo in range(0, len(samples), batch_size):
        part = samples[lo:lo + batch_size]
        gid = np.array([[a.global_id for a in s.input] for s in part])
        tid = np.array([[a.table_id for a in s.input] for s in part])
        po = forward_prefetch_batch(prefetch_params, gid, tid).value
        for row in po:
            out.append([d.global_id for d in decode_indices(list(row), table_sizes)])
    return out


def _check_vocab(params: ModelParameters | None, trace: Trace):
    if params is not None and list(params.table_sizes) != list(trace.table_sizes):
        raise VocabularyMismatchError(
            f"model vocabulary {params.table_sizes} does not match trace "
            f"{trace.table_sizes}")


def replay(trace: Trace, buffer_cfg: BufferConfig,
           caching_params: ModelParameters | None = None,
           prefetch_params: ModelParameters | None = None,
           l_in: int | None = None, l_out: int | None = None,
           window_ratio: int = 3,
           caching_fn=None, prefetch_fn=None) -> BreakdownReport:
    """Chunked replay of the trace through the model-managed buffer.

    ``caching_fn`` / ``prefetch_fn`` substitute a callable (sample -> bits,
    sample -> global ids) for the respective model; tests use them to inject
    oracles.  With neither model nor callable the buffer degenerates to a
    plain priority-decay cache.  Accesses past the last full chunk are still
    served (demand only), so the breakdown always partitions the trace.
    """
    buffer_cfg.validate()
    _check_vocab(caching_params, trace)
    _check_vocab(prefetch_params, trace)
    if l_in is None:
        l_in = caching_params.l_in if caching_params else (
            prefetch_params.l_in if prefetch_params else 15)
    if l_out is None:
        l_out = prefetch_params.l_out if prefetch_params else 5

    samples = chunk(trace, l_in, l_out, window_ratio)
    bits = _model_bits(caching_params, caching_fn, samples)
    prefetches = _model_prefetches(prefetch_params, prefetch_fn, samples,
                                   trace.table_sizes)

    buf = PriorityBuffer(buffer_cfg.capacity, trace.total_ids,
                         buffer_cfg.eviction_speed)
    report = BreakdownReport()
    gids = trace.gid_array
    coverage_sum = 0.0

    def serve(gid: int):
        if gid in buf:
            if buf.reference(gid):
                report.prefetch_hits += 1
            else:
                report.cache_hits += 1
        else:
            report.on_demand += 1
            if buf.full:
                buf.populate()
            buf.add(gid, buf.eviction_speed, prefetched=False)

    for k, sample in enumerate(samples):
        chunk_gids = [int(gids[i]) for i in range(sample.origin, sample.origin + l_in)]
        for gid in chunk_gids:
            serve(gid)
        load_embeddings(buf, chunk_gids, bits[k], prefetches[k])
        assert len(buf) <= buffer_cfg.capacity
        window_gids = [a.global_id for a in sample.window]
        wset = set(window_gids)
        report.prefetch_issued += len(prefetches[k])
        report.prefetch_useful += sum(1 for p in prefetches[k] if p in wset)
        coverage_sum += len(set(prefetches[k]) & wset) / len(wset)

    tail_start = len(samples) * l_in
    for i in range(tail_start, len(gids)):
        serve(int(gids[i]))

    report.coverage = coverage_sum / len(samples) if samples else 0.0
    return report


def replay_policy_only(trace: Trace, cache_cfg: CacheConfig,
                       prefetch_params: ModelParameters | None = None,
                       prefetch_fn=None, l_in: int = 15, l_out: int = 5,
                       window_ratio: int = 3) -> BreakdownReport:
    """Baseline replays with a classic policy in place of the learned stack.

    Without a prefetcher this is exactly the cache simulator reshaped into a
    breakdown.  With one, the policy must be fully associative LRU: the
    chunk loop inserts predicted rows at MRU with a prefetch tag.
    """
    cache_cfg.validate()
    if prefetch_params is None and prefetch_fn is None:
        if cache_cfg.policy == Policy.OPTGEN and cache_cfg.ways is None:
            res = simulate_optgen(trace, cache_cfg.capacity)
        else:
            res = simulate(trace, cache_cfg)
        return BreakdownReport(cache_hits=res.hits, on_demand=res.misses)

    if cache_cfg.policy != Policy.LRU or cache_cfg.ways is not None:
        raise InvalidConfigError(
            "prefetch-augmented baseline supports fully associative LRU only")
    _check_vocab(prefetch_params, trace)

    from collections import OrderedDict
    samples = chunk(trace, l_in, l_out, window_ratio)
    prefetches = _model_prefetches(prefetch_params, prefetch_fn, samples,
                                   trace.table_sizes)
    cache: OrderedDict[int, bool] = OrderedDict()  # gid -> prefetch tag
    report = BreakdownReport()
    gids = trace.gid_array
    coverage_sum = 0.0

    def serve(gid: int):
        if gid in cache:
            if cache[gid]:
                cache[gid] = False
                report.prefetch_hits += 1
            else:
                report.cache_hits += 1
            cache.move_to_end(gid)
        else:
            report.on_demand += 1
            if len(cache) == cache_cfg.capacity:
                cache.popitem(last=False)
            cache[gid] = False

    for k, sample in enumerate(samples):
        for i in range(sample.origin, sample.origin + l_in):
            serve(int(gids[i]))
        for p in prefetches[k]:
            if p not in cache:
                if len(cache) == cache_cfg.capacity:
                    cache.popitem(last=False)
                cache[p] = True
        window_gids = [a.global_id for a in sample.window]
        wset = set(window_gids)
        report.prefetch_issued += len(prefetches[k])
        report.prefetch_useful += sum(1 for p in prefetches[k] if p in wset)
        coverage_sum += len(set(prefetches[k]) & wset) / len(wset)

    for i in range(len(samples) * l_in, len(gids)):
        serve(int(gids[i]))
    report.coverage = coverage_sum / len(samples) if samples else 0.0
    return report


def optgen_miss_oracle(trace: Trace, gpu_capacity: int, l_out: int = 5):
    """Per-sample callable emitting the window's first offline-optimal misses;
    the strongest well-posed prefetcher, used as an upper-bound stand-in."""
    from .labeler import LABEL_CAPACITY_FRACTION
    import math
    cap = max(1, math.floor(LABEL_CAPACITY_FRACTION * gpu_capacity))
    hits = simulate_optgen(trace, cap).per_access_hit

    def fn(sample):
        start = sample.origin + len(sample.input)
        misses = [a.global_id for off, a in enumerate(sample.window)
                  if not hits[start + off]]
        return misses[:l_out]

    return fn


def correctness_vs_window(trace: Trace, prefetch_params: ModelParameters,
                          ratios: list[int], l_in: int | None = None,
                          l_out: int | None = None) -> dict[int, float]:
    """Prefetch correctness of one fixed model under growing windows.

    All ratios are evaluated on the chunk set that has a full window at the
    largest ratio, so the only thing that varies is how much future traffic
    counts as useful.
    """
    if not ratios or any(r < 1 for r in ratios):
        raise InvalidConfigError("ratios must be positive")
    _check_vocab(prefetch_params, trace)
    l_in = l_in or prefetch_params.l_in
    l_out = l_out or prefetch_params.l_out
    max_ratio = max(ratios)
    samples = chunk(trace, l_in, l_out, max_ratio)
    if not samples:
        raise InvalidConfigError("trace too short for the largest window")
    prefetches = _model_prefetches(prefetch_params, None, samples, trace.table_sizes)
    gids = trace.gid_array
    out = {}
    for r in ratios:
        w = r * l_out
        issued = 0
        useful = 0
        for k, sample in enumerate(samples):
            start = sample.origin + l_in
            wset = set(int(g) for g in gids[start:start + w])
            issued += len(prefetches[k])
            useful += sum(1 for p in prefetches[k] if p in wset)
        out[r] = useful / issued if issued else 0.0
    return out


def write_breakdown_csv(rows: list[tuple[str, int, BreakdownReport]], path: str,
                        latency_fn=None):
    """One labeled row per replay; optionally append an estimated latency."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        header = ["label", "capacity", "cache_hits", "prefetch_hits", "on_demand",
                  "hit_rate", "prefetch_issued", "prefetch_useful", "correctness",
                  "coverage"]
        if latency_fn is not None:
            header.append("estimated_latency_ms")
        w.writerow(header)
        for label, capacity, r in rows:
            row = [label, capacity, r.cache_hits, r.prefetch_hits, r.on_demand,
                   f"{r.hit_rate:.6f}", r.prefetch_issued, r.prefetch_useful,
                   f"{r.correctness:.6f}", f"{r.coverage:.6f}"]
            if latency_fn is not None:
                row.append(f"{latency_fn(r):.6f}")
            w.writerow(row)
