"""Embedding access traces: data model, synthetic generation, file IO, chunking.

A trace is an ordered list of embedding-row accesses across a fixed set of
tables.  Rows are addressed two ways: per table as ``(table_id, row_id)`` and
flat as ``global_id`` (row offset after concatenating all tables in order).
Both are kept on every access so downstream consumers never recompute the
mapping.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidConfigError, TraceParseError, TraceValidationError


@dataclass(frozen=True, slots=True)
class EmbeddingIndex:
    """One embedding row, addressed both per-table and flat."""

    table_id: int
    row_id: int
    global_id: int


def table_offsets(table_sizes: list[int]) -> np.ndarray:
    """Cumulative start offset of each table in the flat id space."""
    return np.concatenate(([0], np.cumsum(table_sizes)))


def make_index(table_id: int, row_id: int, table_sizes: list[int]) -> EmbeddingIndex:
    if not 0 <= table_id < len(table_sizes):
        raise TraceValidationError(f"table_id {table_id} out of range")
    if not 0 <= row_id < table_sizes[table_id]:
        raise TraceValidationError(
            f"row_id {row_id} out of range for table {table_id} "
            f"(size {table_sizes[table_id]})"
        )
    offset = int(sum(table_sizes[:table_id]))
    return EmbeddingIndex(table_id, row_id, offset + row_id)


def index_of_global(global_id: int, table_sizes: list[int]) -> EmbeddingIndex:
    """Inverse of the flat mapping: global_id back to (table_id, row_id)."""
    total = int(sum(table_sizes))
    if not 0 <= global_id < total:
        raise TraceValidationError(f"global_id {global_id} out of range [0, {total})")
    offsets = table_offsets(table_sizes)
    table_id = int(np.searchsorted(offsets, global_id, side="right")) - 1
    return EmbeddingIndex(table_id, int(global_id - offsets[table_id]), int(global_id))


@dataclass
class Trace:
    """An ordered access sequence over a fixed table layout.

    ``unique_count`` is recomputed at construction; callers never supply it.
    """

    accesses: list[EmbeddingIndex]
    table_sizes: list[int]
    unique_count: int = field(init=False)
    gid_array: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.gid_array = np.fromiter(
            (a.global_id for a in self.accesses), dtype=np.int64, count=len(self.accesses)
        )
        self.unique_count = int(np.unique(self.gid_array).size)

    def __len__(self) -> int:
        return len(self.accesses)

    @property
    def total_ids(self) -> int:
        return int(sum(self.table_sizes))


def trace_from_gids(gids, table_sizes: list[int]) -> Trace:
    """Build a trace from flat ids alone (tests and generators use this)."""
    offsets = table_offsets(table_sizes)
    gids = np.asarray(gids, dtype=np.int64)
    if gids.size and (gids.min() < 0 or gids.max() >= offsets[-1]):
        raise TraceValidationError("global id out of range for table layout")
    tables = np.searchsorted(offsets, gids, side="right") - 1
    rows = gids - offsets[tables]
    accesses = [
        EmbeddingIndex(int(t), int(r), int(g)) for t, r, g in zip(tables, rows, gids)
    ]
    return Trace(accesses, list(table_sizes))


@dataclass
class TraceGenConfig:
    """Knobs for the synthetic Zipf + short-term-reuse generator.

    ``zipf_exponent`` skews popularity (0 degenerates to uniform).  With
    probability ``markov_stickiness`` an access repeats one of the last
    ``correlation_pool_size`` distinct ids instead of drawing fresh, which
    injects the short-range reuse real recommendation traffic shows.
    """

    table_sizes: list[int]
    total_accesses: int
    zipf_exponent: float = 1.1
    markov_stickiness: float = 0.0
    correlation_pool_size: int = 32
    rng_seed: int = 0

    def validate(self):
        if not self.table_sizes or any(s <= 0 for s in self.table_sizes):
            raise InvalidConfigError("table_sizes must be non-empty and positive")
        if self.total_accesses <= 0:
            raise InvalidConfigError("total_accesses must be positive")
        if self.zipf_exponent < 0:
            raise InvalidConfigError("zipf_exponent must be >= 0")
        if not 0.0 <= self.markov_stickiness <= 1.0:
            raise InvalidConfigError("markov_stickiness must be in [0, 1]")
        if self.correlation_pool_size < 1:
            raise InvalidConfigError("correlation_pool_size must be >= 1")


def generate_trace(cfg: TraceGenConfig) -> Trace:
    """Draw a deterministic synthetic trace from the generator config.

    Popularity ranks follow rank^(-s) and are scattered over the flat id
    space by a seeded permutation so hot rows land in arbitrary tables.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.rng_seed)
    total = int(sum(cfg.table_sizes))
    n = cfg.total_accesses

    ranks = np.arange(1, total + 1, dtype=np.float64)
    weights = ranks ** (-cfg.zipf_exponent)
    probs = weights / weights.sum()
    rank_to_gid = rng.permutation(total)

    zipf_ranks = rng.choice(total, size=n, p=probs)
    sticky_coin = rng.random(n)
    pool_coin = rng.random(n)

    pool: list[int] = []  # most-recent-first distinct ids, capped at pool size
    gids = np.empty(n, dtype=np.int64)
    for i in range(n):
        if pool and sticky_coin[i] < cfg.markov_stickiness:
            gid = pool[int(pool_coin[i] * len(pool))]
        else:
            gid = int(rank_to_gid[zipf_ranks[i]])
        gids[i] = gid
        if pool and pool[0] == gid:
            pass
        else:
            try:
                pool.remove(gid)
            except ValueError:
                pass
            pool.insert(0, gid)
            del pool[cfg.correlation_pool_size:]
    return trace_from_gids(gids, cfg.table_sizes)


def write_trace(trace: Trace, path: str):
    """Serialize to the line-oriented text format (header + one access/line)."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("tables: " + ",".join(str(s) for s in trace.table_sizes) + "\n")
        for a in trace.accesses:
            f.write(f"{a.table_id},{a.row_id}\n")


def read_trace(path: str) -> Trace:
    """Parse a trace file, reporting the offending line on any error."""
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines or not lines[0].startswith("tables: "):
        raise TraceParseError("expected header 'tables: n1,n2,...'", line=1)
    try:
        table_sizes = [int(tok) for tok in lines[0][len("tables: "):].split(",")]
    except ValueError as e:
        raise TraceParseError(f"bad table size list: {e}", line=1)
    if not table_sizes or any(s <= 0 for s in table_sizes):
        raise TraceValidationError("table sizes must be positive", line=1)

    accesses = []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        parts = raw.split(",")
        if len(parts) != 2:
            raise TraceParseError(f"expected 'table_id,row_id', got {raw!r}", line=lineno)
        try:
            table_id, row_id = int(parts[0]), int(parts[1])
        except ValueError:
            raise TraceParseError(f"non-integer field in {raw!r}", line=lineno)
        if not 0 <= table_id < len(table_sizes):
            raise TraceValidationError(f"table_id {table_id} out of range", line=lineno)
        if not 0 <= row_id < table_sizes[table_id]:
            raise TraceValidationError(
                f"row_id {row_id} out of range for table {table_id}", line=lineno
            )
        offset = int(sum(table_sizes[:table_id]))
        accesses.append(EmbeddingIndex(table_id, row_id, offset + row_id))
    return Trace(accesses, table_sizes)


@dataclass
class SequenceSample:
    """One model sample: an input chunk plus whatever labeling it carries.

    ``window`` is the stretch of trace immediately after the chunk; it is
    filled at chunk time because it is fully determined by the trace.
    ``cache_labels`` and ``prefetch_targets`` stay None until a labeler runs.
    """

    input: list[EmbeddingIndex]
    origin: int
    cache_labels: list[int] | None = None
    prefetch_targets: list[EmbeddingIndex] | None = None
    window: list[EmbeddingIndex] | None = None

    def with_labels(self, **kw) -> "SequenceSample":
        return replace(self, **kw)


def chunk(trace: Trace, l_in: int = 15, l_out: int = 5, window_ratio: int = 3) -> list[SequenceSample]:
    """Cut the trace into consecutive non-overlapping input chunks.

    A chunk of length ``l_in`` starting at origin k*l_in is emitted only when
    a full look-ahead window of ``window_ratio * l_out`` accesses follows it,
    so every sample can later be labeled against real future traffic.
    """
    if l_in < 1 or l_out < 1:
        raise InvalidConfigError("l_in and l_out must be >= 1")
    if window_ratio < 1:
        raise InvalidConfigError("window_ratio must be >= 1")
    l_win = window_ratio * l_out
    samples = []
    origin = 0
    n = len(trace)
    while origin + l_in + l_win <= n:
        samples.append(
            SequenceSample(
                input=trace.accesses[origin:origin + l_in],
                origin=origin,
                window=trace.accesses[origin + l_in:origin + l_in + l_win],
            )
        )
        origin += l_in
    return samples
