"""Ground-truth labeling of chunked samples from the offline-optimal replay.

Caching labels are the optimal keep/evict bit per input access.  Prefetch
targets are the ids the optimal cache still misses inside each sample's
look-ahead window: exactly the traffic a prefetcher should hide.  Labels are
computed at a deliberately reduced capacity (80% of the buffer the runtime
will actually have) so the learned policies keep slack for prefetched rows.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .cache_sim import simulate_optgen
from .errors import InvalidConfigError, TraceParseError, TraceValidationError
from .trace import EmbeddingIndex, SequenceSample, Trace, make_index

LABEL_CAPACITY_FRACTION = 0.8


@dataclass
class LabeledDataset:
    samples: list[SequenceSample]
    label_capacity: int
    vocabulary: list[int]          # table sizes the ids were drawn from
    kind: str = "caching"          # "caching" or "prefetch"
    dropped: int = 0               # prefetch samples discarded for having no misses

    def __len__(self) -> int:
        return len(self.samples)


def _label_capacity(gpu_capacity: int) -> int:
    cap = math.floor(LABEL_CAPACITY_FRACTION * gpu_capacity)
    if cap < 1:
        raise InvalidConfigError(
            f"gpu_capacity {gpu_capacity} leaves no room for labeling "
            f"(floor({LABEL_CAPACITY_FRACTION} * capacity) < 1)"
        )
    return cap


def label_caching(trace: Trace, samples: list[SequenceSample], gpu_capacity: int) -> LabeledDataset:
    """Attach optimal keep/evict bits to every sample position."""
    cap = _label_capacity(gpu_capacity)
    res = simulate_optgen(trace, cap)
    keep = res.keep_decisions
    labeled = []
    for s in samples:
        labels = keep[s.origin:s.origin + len(s.input)]
        labeled.append(s.with_labels(cache_labels=list(labels)))
    return LabeledDataset(labeled, cap, list(trace.table_sizes), kind="caching")


def label_prefetch(trace: Trace, samples: list[SequenceSample], gpu_capacity: int,
                   l_out: int = 5) -> LabeledDataset:
    """Attach the first ``l_out`` optimal-cache misses of each window as targets.

    Windows short on misses are padded by repeating the last miss; windows
    with none are dropped (counted in ``dropped``) since there is nothing
    for a prefetcher to do there.
    """
    if l_out < 1:
        raise InvalidConfigError("l_out must be >= 1")
    cap = _label_capacity(gpu_capacity)
    res = simulate_optgen(trace, cap)
    hits = res.per_access_hit
    labeled = []
    dropped = 0
    for s in samples:
        if s.window is None:
            raise InvalidConfigError("prefetch labeling needs samples with windows")
        start = s.origin + len(s.input)
        misses = [a for off, a in enumerate(s.window) if not hits[start + off]]
        if not misses:
            dropped += 1
            continue
        targets = misses[:l_out]
        while len(targets) < l_out:
            targets.append(targets[-1])
        labeled.append(s.with_labels(prefetch_targets=targets))
    return LabeledDataset(labeled, cap, list(trace.table_sizes), kind="prefetch",
                          dropped=dropped)


def split_dataset(ds: LabeledDataset, ratio: float | None = 0.8,
                  parity: bool = False) -> tuple[LabeledDataset, LabeledDataset]:
    """Deterministic train/validation split, by leading ratio or chunk parity."""
    if parity:
        train = [s for i, s in enumerate(ds.samples) if i % 2 == 0]
        val = [s for i, s in enumerate(ds.samples) if i % 2 == 1]
    else:
        if ratio is None or not 0.0 < ratio < 1.0:
            raise InvalidConfigError("split ratio must be in (0, 1)")
        cut = int(len(ds.samples) * ratio)
        train, val = ds.samples[:cut], ds.samples[cut:]
    mk = lambda ss: LabeledDataset(ss, ds.label_capacity, list(ds.vocabulary),
                                   kind=ds.kind, dropped=ds.dropped)
    return mk(train), mk(val)


def _fmt_pairs(indices: list[EmbeddingIndex] | None) -> str:
    if indices is None:
        return ""
    return " ".join(f"{a.table_id},{a.row_id}" for a in indices)


def _parse_pairs(text: str, table_sizes: list[int], lineno: int) -> list[EmbeddingIndex]:
    out = []
    for tok in text.split():
        parts = tok.split(",")
        if len(parts) != 2:
            raise TraceParseError(f"expected 'table,row' pair, got {tok!r}", line=lineno)
        try:
            t, r = int(parts[0]), int(parts[1])
        except ValueError:
            raise TraceParseError(f"non-integer pair {tok!r}", line=lineno)
        try:
            out.append(make_index(t, r, table_sizes))
        except TraceValidationError as e:
            raise TraceValidationError(str(e), line=lineno)
    return out


def write_dataset(ds: LabeledDataset, path: str):
    """One header block, then one pipe-delimited record per sample."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("tables: " + ",".join(str(s) for s in ds.vocabulary) + "\n")
        f.write(f"kind: {ds.kind}\n")
        f.write(f"label_capacity: {ds.label_capacity}\n")
        f.write(f"dropped: {ds.dropped}\n")
        for s in ds.samples:
            labels = "" if s.cache_labels is None else ",".join(map(str, s.cache_labels))
            f.write("|".join([
                str(s.origin),
                _fmt_pairs(s.input),
                labels,
                _fmt_pairs(s.prefetch_targets),
                _fmt_pairs(s.window),
            ]) + "\n")


def read_dataset(path: str) -> LabeledDataset:
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    header: dict[str, str] = {}
    body_start = 0
    for i, raw in enumerate(lines):
        if "|" in raw or not raw.strip():
            body_start = i
            break
        if ": " not in raw:
            raise TraceParseError(f"bad header line {raw!r}", line=i + 1)
        key, val = raw.split(": ", 1)
        header[key] = val
        body_start = i + 1
    for required in ("tables", "kind", "label_capacity"):
        if required not in header:
            raise TraceParseError(f"missing header field {required!r}", line=1)
    try:
        table_sizes = [int(tok) for tok in header["tables"].split(",")]
        label_capacity = int(header["label_capacity"])
        dropped = int(header.get("dropped", "0"))
    except ValueError as e:
        raise TraceParseError(f"bad header value: {e}", line=1)

    samples = []
    for lineno, raw in enumerate(lines[body_start:], start=body_start + 1):
        if not raw.strip():
            continue
        cols = raw.split("|")
        if len(cols) != 5:
            raise TraceParseError(f"expected 5 pipe-delimited fields, got {len(cols)}",
                                  line=lineno)
        origin_s, input_s, labels_s, targets_s, window_s = cols
        try:
            origin = int(origin_s)
        except ValueError:
            raise TraceParseError(f"bad origin {origin_s!r}", line=lineno)
        labels = None
        if labels_s:
            try:
                labels = [int(tok) for tok in labels_s.split(",")]
            except ValueError:
                raise TraceParseError(f"bad label list {labels_s!r}", line=lineno)
            if any(b not in (0, 1) for b in labels):
                raise TraceValidationError("labels must be 0/1 bits", line=lineno)
        samples.append(SequenceSample(
            input=_parse_pairs(input_s, table_sizes, lineno),
            origin=origin,
            cache_labels=labels,
            prefetch_targets=_parse_pairs(targets_s, table_sizes, lineno) or None,
            window=_parse_pairs(window_s, table_sizes, lineno) or None,
        ))
    return LabeledDataset(samples, label_capacity, table_sizes,
                          kind=header["kind"], dropped=dropped)
