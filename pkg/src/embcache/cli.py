"""Command line front end: gen / analyze / sweep / label / train / replay / report.

All commands are deterministic given their flags: the same invocation writes
byte-identical artifacts.  Capacity flags accept either an absolute block
count or a percentage like ``20%``, resolved against the trace's unique id
count.  A ``--config`` file of ``key = value`` lines presets any long flag;
explicit flags win.  Errors print one line, ``error:<category>: <message>``,
and exit nonzero.
"""
from __future__ import annotations

import argparse
import csv
import math
import os
import sys

from . import analysis, cache_sim, perf, runtime
from .errors import EmbcacheError, InvalidConfigError, MissingArtifactError
from .labeler import label_caching, label_prefetch, read_dataset, split_dataset, write_dataset
from .neural import (LossConfig, LossKind, TrainConfig, init_params,
                     load_checkpoint, save_checkpoint, train, write_loss_curve_csv)
from .trace import Trace, TraceGenConfig, chunk, generate_trace, read_trace, write_trace


def _parse_tables(text: str) -> list[int]:
    """Accept '8x2000' (count x rows) or an explicit '100,200,300' list."""
    try:
        if "x" in text:
            count, rows = text.split("x")
            return [int(rows)] * int(count)
        return [int(tok) for tok in text.split(",")]
    except ValueError:
        raise InvalidConfigError(f"cannot parse table layout {text!r}")


def _resolve_capacity(text: str, trace: Trace) -> int:
    """Absolute block count, or percent of the trace's unique ids."""
    text = str(text).strip()
    try:
        if text.endswith("%"):
            share = float(text[:-1]) / 100.0
            cap = math.floor(share * trace.unique_count)
        else:
            cap = int(text)
    except ValueError:
        raise InvalidConfigError(f"cannot parse capacity {text!r}")
    if cap < 1:
        raise InvalidConfigError(f"capacity {text!r} resolves to {cap} blocks")
    return cap


def _require_file(path: str, what: str) -> str:
    if not path:
        raise MissingArtifactError(f"no {what} was supplied")
    if not os.path.exists(path):
        raise MissingArtifactError(f"{what} {path!r} does not exist")
    return path


def _load_config_file(path: str) -> dict[str, str]:
    out = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidConfigError(f"config line {lineno} is not key = value")
            key, val = line.split("=", 1)
            out[key.strip().replace("-", "_")] = val.strip()
    return out


def cmd_gen(args) -> int:
    cfg = TraceGenConfig(
        table_sizes=_parse_tables(args.tables),
        total_accesses=int(args.accesses),
        zipf_exponent=float(args.zipf),
        markov_stickiness=float(args.stickiness),
        correlation_pool_size=int(args.pool),
        rng_seed=int(args.seed),
    )
    trace = generate_trace(cfg)
    write_trace(trace, args.out)
    print(f"wrote {len(trace)} accesses over {trace.unique_count} unique ids "
          f"to {args.out}")
    return 0


def cmd_analyze(args) -> int:
    trace = read_trace(_require_file(args.trace, "trace"))
    report = analysis.reuse_distances(trace)
    points = analysis.frequency_cdf(trace)
    prefix = args.out_prefix
    hist_path = f"{prefix}_reuse_hist.csv"
    cdf_path = f"{prefix}_freq_cdf.csv"
    analysis.write_reuse_histogram_csv(report, hist_path)
    analysis.write_frequency_cdf_csv(points, cdf_path)
    finite = [d for d in report.per_access if d is not None]
    median = sorted(finite)[len(finite) // 2] if finite else "n/a"
    print(f"accesses {len(trace)}, unique {trace.unique_count}, "
          f"cold {report.cold_count}, median reuse distance {median}")
    print(f"wrote {hist_path} and {cdf_path}")
    return 0


def cmd_sweep(args) -> int:
    trace = read_trace(_require_file(args.trace, "trace"))
    policies = [cache_sim.Policy(p.strip()) for p in args.policies.split(",")]
    capacities = [_resolve_capacity(tok, trace) for tok in args.capacities.split(",")]
    ways = None if args.ways in (None, "", "full") else int(args.ways)
    if ways is not None:
        capacities = [max(ways, cap - cap % ways) for cap in capacities]
    rows = cache_sim.sweep(trace, policies, capacities, ways=ways)
    cache_sim.write_sweep_csv(rows, args.out)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def cmd_label(args) -> int:
    trace = read_trace(_require_file(args.trace, "trace"))
    gpu_capacity = _resolve_capacity(args.gpu_capacity, trace)
    samples = chunk(trace, int(args.l_in), int(args.l_out), int(args.window_ratio))
    if args.kind == "caching":
        ds = label_caching(trace, samples, gpu_capacity)
    else:
        ds = label_prefetch(trace, samples, gpu_capacity, l_out=int(args.l_out))
    if args.split:
        train_ds, val_ds = split_dataset(ds, ratio=float(args.split))
        write_dataset(train_ds, args.out)
        val_path = args.out_val or args.out + ".val"
        write_dataset(val_ds, val_path)
        print(f"wrote {len(train_ds)} train / {len(val_ds)} val samples "
              f"(dropped {ds.dropped}) at label capacity {ds.label_capacity}")
    else:
        write_dataset(ds, args.out)
        print(f"wrote {len(ds)} samples (dropped {ds.dropped}) "
              f"at label capacity {ds.label_capacity}")
    return 0


def cmd_train(args) -> int:
    ds = read_dataset(_require_file(args.dataset, "dataset"))
    l_in = len(ds.samples[0].input) if ds.samples else 15
    if ds.kind == "caching":
        loss_kind = LossKind.CROSS_ENTROPY
        l_out = int(args.l_out)
    else:
        loss_kind = LossKind(args.loss) if args.loss else LossKind.CHAMFER2
        l_out = len(ds.samples[0].prefetch_targets) if ds.samples else int(args.l_out)
    if ds.kind == "caching" and args.loss and args.loss != "cross_entropy":
        raise InvalidConfigError("caching datasets train with cross_entropy")
    stacks = int(args.stacks) if args.stacks else (1 if ds.kind == "caching" else 2)
    params = init_params(ds.kind, ds.vocabulary, dim=int(args.dim), stacks=stacks,
                         l_in=l_in, l_out=l_out, seed=int(args.seed))
    train_cfg = TrainConfig(learning_rate=float(args.lr),
                            batch_size=int(args.batch),
                            max_steps=int(args.steps), seed=int(args.seed),
                            validation_split=float(args.val_split),
                            grad_check=bool(args.grad_check))
    loss_cfg = LossConfig(kind=loss_kind, alpha=float(args.alpha),
                          window_ratio=int(args.window_ratio))
    result = train(ds, params, train_cfg, loss_cfg)
    save_checkpoint(result.params, args.out)
    if args.curve:
        write_loss_curve_csv(result, args.curve)
    status = "aborted (non-finite loss); kept last good state" if result.aborted else "done"
    final_loss = result.loss_curve[-1][1] if result.loss_curve else float("nan")
    final_val = result.val_metrics[-1][1] if result.val_metrics else float("nan")
    print(f"{status}: {len(result.loss_curve)} steps, final loss {final_loss:.6f}, "
          f"validation metric {final_val:.4f}, "
          f"{result.params.param_count} parameters -> {args.out}")
    return 0


def cmd_replay(args) -> int:
    trace = read_trace(_require_file(args.trace, "trace"))
    capacity = _resolve_capacity(args.capacity, trace)
    caching_params = None
    prefetch_params = None
    if args.caching_model:
        caching_params = load_checkpoint(_require_file(args.caching_model, "checkpoint"),
                                         table_sizes=trace.table_sizes)
    if args.prefetch_model:
        prefetch_params = load_checkpoint(_require_file(args.prefetch_model, "checkpoint"),
                                          table_sizes=trace.table_sizes)

    if args.policy:
        cfg = cache_sim.CacheConfig(capacity=capacity,
                                    policy=cache_sim.Policy(args.policy))
        report = runtime.replay_policy_only(
            trace, cfg, prefetch_params=prefetch_params,
            l_in=int(args.l_in), l_out=int(args.l_out),
            window_ratio=int(args.window_ratio))
        label = args.label or (args.policy + ("+pf" if prefetch_params else ""))
    else:
        if caching_params is None and prefetch_params is None:
            raise MissingArtifactError(
                "replay needs a trained checkpoint (--caching-model/--prefetch-model) "
                "or a --policy baseline")
        buffer_cfg = runtime.BufferConfig(capacity=capacity,
                                          eviction_speed=int(args.eviction_speed))
        report = runtime.replay(trace, buffer_cfg, caching_params, prefetch_params,
                                window_ratio=int(args.window_ratio))
        label = args.label or "learned"
    runtime.write_breakdown_csv([(label, capacity, report)], args.out)
    print(f"{label}: cache_hits {report.cache_hits}, prefetch_hits "
          f"{report.prefetch_hits}, on_demand {report.on_demand}, "
          f"hit_rate {report.hit_rate:.4f}, correctness {report.correctness:.4f}, "
          f"coverage {report.coverage:.4f} -> {args.out}")
    return 0


def cmd_report(args) -> int:
    rows = []
    for path in args.breakdowns.split(","):
        with open(_require_file(path.strip(), "breakdown csv"), "r",
                  encoding="utf-8", newline="") as f:
            reader = csv.DictReader(f)
            rows.extend(list(reader))
    if not rows:
        raise MissingArtifactError("no breakdown rows found")
    n_accesses = int(args.accesses) if args.accesses else None
    model = None
    if n_accesses:
        grid = [i / 20.0 for i in range(21)]
        model = perf.fit(perf.synthetic_points(grid, n_accesses,
                                               hit_cost_us=float(args.hit_cost),
                                               miss_cost_us=float(args.miss_cost)))
    with open(args.out, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        header = ["label", "capacity", "cache_hits", "prefetch_hits", "on_demand",
                  "hit_rate", "correctness", "coverage"]
        if model:
            header.append("estimated_latency_ms")
        w.writerow(header)
        for r in rows:
            row = [r["label"], r["capacity"], r["cache_hits"], r["prefetch_hits"],
                   r["on_demand"], r["hit_rate"], r["correctness"], r["coverage"]]
            if model:
                row.append(f"{perf.estimate(model, float(r['hit_rate'])):.6f}")
            w.writerow(row)
    if model:
        print(model)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def build_parser() -> tuple[argparse.ArgumentParser, list[argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="embcache",
        description="Trace-driven caching and learned prefetching toolkit")
    parser.add_argument("--config", help="file of key = value flag presets")
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers = []

    p = sub.add_parser("gen", help="generate a synthetic access trace")
    p.add_argument("--out", required=True)
    p.add_argument("--tables", default="8x2000")
    p.add_argument("--accesses", default=100000)
    p.add_argument("--zipf", default=1.1)
    p.add_argument("--stickiness", default=0.0)
    p.add_argument("--pool", default=32)
    p.add_argument("--seed", default=0)
    p.set_defaults(fn=cmd_gen)
    subparsers.append(p)

    p = sub.add_parser("analyze", help="reuse distances and frequency skew")
    p.add_argument("--trace", required=True)
    p.add_argument("--out-prefix", default="analysis")
    p.set_defaults(fn=cmd_analyze)
    subparsers.append(p)

    p = sub.add_parser("sweep", help="policy x capacity hit-rate grid")
    p.add_argument("--trace", required=True)
    p.add_argument("--policies", default="lru,optgen")
    p.add_argument("--capacities", default="1%,5%,10%,15%,20%,30%")
    p.add_argument("--ways", default=None, help="set-associative ways or 'full'")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sweep)
    subparsers.append(p)

    p = sub.add_parser("label", help="build a labeled training dataset")
    p.add_argument("--trace", required=True)
    p.add_argument("--kind", choices=["caching", "prefetch"], required=True)
    p.add_argument("--gpu-capacity", default="20%")
    p.add_argument("--l-in", default=15)
    p.add_argument("--l-out", default=5)
    p.add_argument("--window-ratio", default=3)
    p.add_argument("--split", default=None, help="train fraction, e.g. 0.8")
    p.add_argument("--out", required=True)
    p.add_argument("--out-val", default=None)
    p.set_defaults(fn=cmd_label)
    subparsers.append(p)

    p = sub.add_parser("train", help="train a model on a labeled dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--curve", default=None, help="loss curve csv path")
    p.add_argument("--dim", default=32)
    p.add_argument("--stacks", default=None)
    p.add_argument("--steps", default=500)
    p.add_argument("--batch", default=32)
    p.add_argument("--lr", default=1e-3)
    p.add_argument("--seed", default=0)
    p.add_argument("--loss", default=None,
                   choices=["cross_entropy", "chamfer2", "chamfer1"])
    p.add_argument("--alpha", default=0.7)
    p.add_argument("--window-ratio", default=3)
    p.add_argument("--l-out", default=5)
    p.add_argument("--val-split", default=0.2)
    p.add_argument("--grad-check", action="store_true")
    p.set_defaults(fn=cmd_train)
    subparsers.append(p)

    p = sub.add_parser("replay", help="replay a trace through buffer + models")
    p.add_argument("--trace", required=True)
    p.add_argument("--capacity", default="20%")
    p.add_argument("--caching-model", default=None)
    p.add_argument("--prefetch-model", default=None)
    p.add_argument("--policy", default=None,
                   choices=["lru", "lfu", "srrip", "optgen"])
    p.add_argument("--eviction-speed", default=runtime.EVICTION_SPEED)
    p.add_argument("--window-ratio", default=3)
    p.add_argument("--l-in", default=15)
    p.add_argument("--l-out", default=5)
    p.add_argument("--label", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_replay)
    subparsers.append(p)

    p = sub.add_parser("report", help="merge breakdowns and estimate latency")
    p.add_argument("--breakdowns", required=True, help="comma-separated csv paths")
    p.add_argument("--out", required=True)
    p.add_argument("--accesses", default=None,
                   help="access count for the synthetic cost model")
    p.add_argument("--hit-cost", default=perf.HIT_COST_US)
    p.add_argument("--miss-cost", default=perf.MISS_COST_US)
    p.set_defaults(fn=cmd_report)
    subparsers.append(p)

    return parser, subparsers


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subparsers = build_parser()
    if "--config" in argv:
        cfg_path = argv[argv.index("--config") + 1]
        try:
            presets = _load_config_file(cfg_path)
        except OSError as e:
            print(f"error:missing-artifact: config file unreadable: {e}",
                  file=sys.stderr)
            return 1
        except EmbcacheError as e:
            print(f"error:{e.category}: {e}", file=sys.stderr)
            return 1
        for sp in subparsers:
            known = {a.dest for a in sp._actions}
            sp.set_defaults(**{k: v for k, v in presets.items() if k in known})
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except EmbcacheError as e:
        print(f"error:{e.category}: {e}", file=sys.stderr)
        return 1
    except ValueError as e:
        print(f"error:invalid-value: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
