"""Acceptance gates, one test per criterion.

Each test is self-describing in `pytest -v` (one line per criterion) and
prints a `[PASS] criterion N: ...` summary with the measured numbers.  The
heavyweight pipeline (synthetic trace -> optimal labels -> two trained
models -> instrumented replays) is built once in a module-scoped fixture
and shared by the replay-level criteria (6, 7, 8, 10).

The end-to-end criterion (6) is directional: the learned pipeline must beat
plain LRU on the same buffer budget, and each added model must not hurt.
Measured margins from the first successful run are frozen below as
regression floors; the directional inequalities are the actual bar.
"""
import time
from types import SimpleNamespace

import numpy as np
import pytest

import embcache.runtime as rt
from embcache import (BufferConfig, CacheConfig, Policy, PriorityBuffer,
                      TraceGenConfig, brute_force_optimal, chamfer_loss,
                      chamfer_one_sided, chunk, correctness_vs_window,
                      generate_trace, gpu_buffer_populate, init_params,
                      label_caching, label_prefetch, load_embeddings,
                      lru_hit_count, replay, replay_policy_only,
                      reuse_distances, simulate, simulate_optgen,
                      trace_from_gids, train)
from embcache import perf
from embcache.labeler import LABEL_CAPACITY_FRACTION
from embcache.neural import LossConfig, LossKind, TrainConfig
from embcache.neural.model import forward_prefetch_batch
from embcache.neural.train import (TrainingBatch, chamfer_tie_free,
                                   finite_difference_check, make_batch)

# ---------------------------------------------------------------------------
# End-to-end pipeline configuration (criteria 6-8, 10).
#
# The trace mixes a mild Zipf skew with Markov stickiness so that it carries
# three kinds of traffic at once: a hot set every policy retains, a fat cold
# tail nobody can retain, and a mid-band of ids whose reuse straddles the
# buffer: those are the accesses the learned pipeline can win.  The buffer's
# aging horizon (eviction_speed) is set to one capacity turnover so that
# un-reused entries age out at the same depth the buffer can actually hold;
# the retain bits then act as targeted protection on top.
E2E_CFG = TraceGenConfig(table_sizes=[400] * 32, total_accesses=100_000,
                         zipf_exponent=1.0, markov_stickiness=0.55,
                         correlation_pool_size=48, rng_seed=40)
E2E_L_IN = 15
E2E_L_OUT = 5
E2E_WINDOW_RATIO = 3
E2E_CM = dict(dim=32, steps=3000, lr=2e-3, seed=9)
E2E_PM = dict(dim=6, steps=1200, lr=1e-3, seed=7)

# Frozen regression floors from the first successful run (criterion 6 asks
# for the achieved margin to be recorded; direction is the bar).  The
# trained-retention margin reproduces exactly under the pinned seeds.  The
# full-pipeline leg does NOT pass at this scale: every prefetch insertion
# forces an eviction whose decay step ages the whole buffer, and the
# labeling construction guarantees targets never overlap the input chunk,
# so a sequence model has no input-derivable signal to predict them with.
# The assertion is kept faithful and the measured gap is reported when it
# fails; see the failure message for the recorded value.
CM_MARGIN_FLOOR = 58         # trained-model replay hits minus LRU hits
FULL_VS_CM_CEIL = 0          # full-pipeline on_demand minus model-only


def _ok(n: int, msg: str):
    print(f"[PASS] criterion {n}: {msg}")


# ---------------------------------------------------------------------------
# criterion 1


def test_criterion_01_optimal_cache_matches_oracle_and_dominates():
    t0 = time.time()
    rng = np.random.default_rng(1001)
    for _ in range(200):
        n = int(rng.integers(1, 15))
        universe = int(rng.integers(1, 9))
        cap = int(rng.integers(1, 5))
        tr = trace_from_gids(rng.integers(0, universe, size=n).tolist(),
                             [universe])
        assert simulate_optgen(tr, cap).hits == brute_force_optimal(tr, cap)
    for _ in range(100):
        universe = int(rng.integers(50, 600))
        tr = trace_from_gids(rng.integers(0, universe, size=10_000).tolist(),
                             [universe])
        cap = 8 * int(rng.integers(1, 13))
        opt = simulate_optgen(tr, cap).hits
        lru = simulate(tr, CacheConfig(cap, policy=Policy.LRU)).hits
        lfu = simulate(tr, CacheConfig(cap, policy=Policy.LFU, ways=8)).hits
        srrip = simulate(tr, CacheConfig(cap, policy=Policy.SRRIP, ways=8)).hits
        assert opt >= lru and opt >= lfu and opt >= srrip
    wall = time.time() - t0
    assert wall < 60.0
    _ok(1, f"200 exact small-trace matches, 100 dominance checks, {wall:.1f}s")


# ---------------------------------------------------------------------------
# criterion 2


def test_criterion_02_lru_hits_equal_reuse_distance_prediction():
    rng = np.random.default_rng(2002)
    for _ in range(100):
        universe = int(rng.integers(20, 400))
        tr = trace_from_gids(rng.integers(0, universe, size=2000).tolist(),
                             [universe])
        cap = int(rng.integers(1, universe + 20))
        report = reuse_distances(tr)
        assert lru_hit_count(report, cap) == \
            simulate(tr, CacheConfig(cap)).hits
    _ok(2, "100 random traces: LRU hits == #(reuse distance < capacity)")


# ---------------------------------------------------------------------------
# criterion 3

_FD_SIZES = [5, 4]


def _random_caching_batch(rng: np.random.Generator) -> TrainingBatch:
    gid = rng.integers(0, 9, size=(2, 4))
    tid = np.where(gid < 5, 0, 1)
    labels = rng.integers(0, 2, size=(2, 4)).astype(np.float64)
    return TrainingBatch(gid=gid, tid=tid, labels=labels,
                         window_norm=None, window_gids=None)


def _tie_free_prefetch_draw(seed: int):
    """Draw (params, batch) whose Chamfer assignments are unambiguous.

    A draw is rejected when any nearest-neighbor gap falls below 1e-3: the
    h=1e-4 probe must not be able to flip an assignment.  The wide init
    spreads the slot outputs; at the default scale they start near-identical,
    which is itself a tie.
    """
    for attempt in range(64):
        s = seed + 100_000 * attempt
        rng = np.random.default_rng(s)
        params = init_params("prefetch", _FD_SIZES, dim=3, l_in=4, l_out=2,
                             seed=s, init_scale=0.6)
        gid = rng.integers(0, 9, size=(2, 4))
        tid = np.where(gid < 5, 0, 1)
        window = rng.integers(0, 9, size=(2, 6)).astype(np.float64) / 8.0
        batch = TrainingBatch(gid=gid, tid=tid, labels=None,
                              window_norm=window, window_gids=None)
        po = forward_prefetch_batch(params, gid, tid).value
        if chamfer_tie_free(po, window, tol=1e-3):
            return params, batch
    raise AssertionError("could not draw a tie-free configuration")


def test_criterion_03_gradients_match_finite_differences():
    t0 = time.time()
    worst = 0.0
    for draw in range(20):
        rng = np.random.default_rng(3000 + draw)
        params = init_params("caching", _FD_SIZES, dim=3, l_in=4, l_out=2,
                             seed=3000 + draw)
        err = finite_difference_check(
            params, _random_caching_batch(rng),
            LossConfig(LossKind.CROSS_ENTROPY), h=1e-4, rtol=1e-3, atol=1e-6)
        worst = max(worst, err)
    for draw in range(20):
        kind = LossKind.CHAMFER2 if draw % 2 == 0 else LossKind.CHAMFER1
        params, batch = _tie_free_prefetch_draw(4000 + draw)
        err = finite_difference_check(
            params, batch, LossConfig(kind, alpha=0.7),
            h=1e-4, rtol=1e-3, atol=1e-6)
        worst = max(worst, err)
    wall = time.time() - t0
    assert worst <= 1e-3
    assert wall < 120.0
    _ok(3, f"40 parameter draws, every entry within rel 1e-3 "
           f"(worst {worst:.2e}), {wall:.1f}s")


# ---------------------------------------------------------------------------
# criterion 4


def test_criterion_04_chamfer_worked_example():
    one_sided = chamfer_one_sided([1.0, 2.0, 3.0], [2.0, 6.0, 7.0, 8.0])
    assert one_sided == pytest.approx(2.0, abs=1e-12)
    loss = chamfer_loss([1.0, 2.0, 3.0], [2.0, 6.0, 7.0, 8.0], alpha=0.7)
    assert loss == pytest.approx(1.3667, abs=1e-4)
    _ok(4, f"one-sided = {one_sided}, two-sided @ alpha 0.7 = {loss:.7f}")


# ---------------------------------------------------------------------------
# criterion 5


def _slot_spread(params, dataset, n=256) -> float:
    batch = make_batch(dataset.samples[:n], dataset.vocabulary, "prefetch")
    po = forward_prefetch_batch(params, batch.gid, batch.tid).value
    return float(np.mean(np.std(po, axis=1)))


def test_criterion_05_one_sided_loss_collapses_two_sided_does_not():
    cfg = TraceGenConfig(table_sizes=[250] * 8, total_accesses=20_000,
                         zipf_exponent=1.05, markov_stickiness=0.5,
                         correlation_pool_size=32, rng_seed=31)
    trace = generate_trace(cfg)
    samples = chunk(trace, 15, 5, 3)
    dataset = label_prefetch(trace, samples, int(0.2 * trace.unique_count))

    results = {}
    for kind in (LossKind.CHAMFER1, LossKind.CHAMFER2):
        params = init_params("prefetch", trace.table_sizes, dim=8,
                             l_in=15, l_out=5, seed=5)
        run = train(dataset, params,
                    TrainConfig(learning_rate=3e-3, batch_size=32,
                                max_steps=500, seed=5, validation_split=0.1),
                    LossConfig(kind, alpha=0.7))
        results[kind] = (run, _slot_spread(run.params, dataset))

    one_run, one_spread = results[LossKind.CHAMFER1]
    two_run, two_spread = results[LossKind.CHAMFER2]
    curve = dict(two_run.loss_curve)
    assert one_spread < 0.01, f"one-sided spread {one_spread}"
    assert two_spread >= 0.05, f"two-sided spread {two_spread}"
    assert curve[500] < curve[10]
    _ok(5, f"one-sided collapses (spread {one_spread:.2e} < 0.01), two-sided "
           f"spreads ({two_spread:.3f} >= 0.05), loss {curve[10]:.4f} -> "
           f"{curve[500]:.4f}")


# ---------------------------------------------------------------------------
# shared end-to-end pipeline (criteria 6-8, 10)


@pytest.fixture(scope="module")
def pipeline():
    t0 = time.time()
    trace = generate_trace(E2E_CFG)
    capacity = int(0.2 * trace.unique_count)
    buffer_cfg = BufferConfig(capacity, eviction_speed=capacity)

    samples = chunk(trace, E2E_L_IN, E2E_L_OUT, E2E_WINDOW_RATIO)
    caching_ds = label_caching(trace, samples, capacity)
    prefetch_ds = label_prefetch(trace, samples, capacity)

    cm0 = init_params("caching", trace.table_sizes, dim=E2E_CM["dim"],
                      l_in=E2E_L_IN, l_out=E2E_L_OUT, seed=E2E_CM["seed"])
    cm_run = train(caching_ds, cm0,
                   TrainConfig(learning_rate=E2E_CM["lr"], batch_size=32,
                               max_steps=E2E_CM["steps"], seed=E2E_CM["seed"],
                               validation_split=0.1),
                   LossConfig(LossKind.CROSS_ENTROPY))
    pm0 = init_params("prefetch", trace.table_sizes, dim=E2E_PM["dim"],
                      l_in=E2E_L_IN, l_out=E2E_L_OUT, seed=E2E_PM["seed"])
    pm_run = train(prefetch_ds, pm0,
                   TrainConfig(learning_rate=E2E_PM["lr"], batch_size=32,
                               max_steps=E2E_PM["steps"], seed=E2E_PM["seed"],
                               validation_split=0.1),
                   LossConfig(LossKind.CHAMFER2, alpha=0.7))
    assert not cm_run.aborted and not pm_run.aborted

    lru = replay_policy_only(trace, CacheConfig(capacity, policy=Policy.LRU))
    cm_only = replay(trace, buffer_cfg, caching_params=cm_run.params)
    full = replay(trace, buffer_cfg, caching_params=cm_run.params,
                  prefetch_params=pm_run.params)

    return SimpleNamespace(trace=trace, capacity=capacity,
                           buffer_cfg=buffer_cfg,
                           caching_ds=caching_ds, prefetch_ds=prefetch_ds,
                           cm_run=cm_run, pm_run=pm_run,
                           lru=lru, cm_only=cm_only, full=full,
                           wall=time.time() - t0)


# ---------------------------------------------------------------------------
# criterion 6


def test_criterion_06_trained_pipeline_beats_lru_directionally(pipeline):
    trace = pipeline.trace
    assert len(trace.accesses) == 100_000
    assert trace.unique_count >= 5_000
    assert pipeline.capacity == int(0.2 * trace.unique_count)

    cm_margin = pipeline.cm_only.hits - pipeline.lru.hits
    full_vs_cm = pipeline.full.on_demand - pipeline.cm_only.on_demand

    assert pipeline.cm_only.hits >= pipeline.lru.hits
    assert pipeline.cm_only.on_demand <= pipeline.lru.on_demand
    # regression floor frozen from the first successful run
    assert cm_margin >= CM_MARGIN_FLOOR
    assert pipeline.wall < 900.0
    # The full-pipeline leg is structurally out of reach at this scale (see
    # module constants); the assertion stays faithful and records the gap.
    assert full_vs_cm <= FULL_VS_CM_CEIL, (
        f"full-pipeline on_demand {pipeline.full.on_demand} exceeds "
        f"model-only {pipeline.cm_only.on_demand} by {full_vs_cm} "
        f"(prefetch issued {pipeline.full.prefetch_issued}, "
        f"prefetch hits {pipeline.full.prefetch_hits})")

    _ok(6, f"unique {trace.unique_count}, buffer {pipeline.capacity}: "
           f"model-only hits {pipeline.cm_only.hits} >= LRU "
           f"{pipeline.lru.hits} (+{cm_margin}); on_demand full "
           f"{pipeline.full.on_demand} <= model-only "
           f"{pipeline.cm_only.on_demand} <= LRU {pipeline.lru.on_demand}; "
           f"{pipeline.wall:.0f}s")


# ---------------------------------------------------------------------------
# criterion 7


def test_criterion_07_prefetch_correctness_grows_with_window(pipeline):
    ratios = [1, 2, 3, 4]
    by_ratio = correctness_vs_window(pipeline.trace, pipeline.pm_run.params,
                                     ratios, l_in=E2E_L_IN, l_out=E2E_L_OUT)
    values = [by_ratio[r] for r in ratios]
    for lo, hi in zip(values, values[1:]):
        assert hi >= lo
    assert by_ratio[3] >= by_ratio[1]
    _ok(7, "correctness over window ratios 1..4: "
           + " <= ".join(f"{v:.4f}" for v in values))


# ---------------------------------------------------------------------------
# criterion 8


def test_criterion_08_capacity_sweep_is_monotone_and_optimal_dominates(pipeline):
    trace = pipeline.trace
    unique = trace.unique_count
    capacities = [max(1, int(unique * pct / 100)) for pct in (1, 5, 10, 15, 20, 30)]
    lru_rates = [simulate(trace, CacheConfig(c, policy=Policy.LRU)).hit_rate
                 for c in capacities]
    opt_rates = [simulate_optgen(trace, c).hit_rate for c in capacities]
    for series in (lru_rates, opt_rates):
        for lo, hi in zip(series, series[1:]):
            assert hi >= lo
    for lru_rate, opt_rate in zip(lru_rates, opt_rates):
        assert opt_rate >= lru_rate
    _ok(8, "hit rate non-decreasing over {1,5,10,15,20,30}% capacity; "
           f"optimal dominates LRU at all 6 points "
           f"(20%: {opt_rates[4]:.4f} vs {lru_rates[4]:.4f})")


# ---------------------------------------------------------------------------
# criterion 9


def test_criterion_09_performance_model_recovers_cost_line():
    n = 1_000_000
    slope_true = (perf.HIT_COST_US - perf.MISS_COST_US) * n / 1000.0
    intercept_true = perf.MISS_COST_US * n / 1000.0

    clean = perf.synthetic_points([i / 10 for i in range(11)], n)
    model = perf.fit(clean)
    assert model.fit_rmse == pytest.approx(0.0, abs=1e-6)
    assert model.slope == pytest.approx(slope_true, rel=1e-9)
    assert model.intercept == pytest.approx(intercept_true, rel=1e-9)

    rates = list(np.linspace(0.05, 0.95, 50))
    noisy = perf.synthetic_points(rates, n, noise_sigma_ms=2.0, seed=909)
    noisy_model = perf.fit(noisy)
    assert noisy_model.slope == pytest.approx(slope_true, rel=0.05)
    assert noisy_model.intercept == pytest.approx(intercept_true, rel=0.05)

    ranking_trace = generate_trace(
        TraceGenConfig(table_sizes=[500] * 4, total_accesses=20_000,
                       zipf_exponent=1.1, markov_stickiness=0.3,
                       correlation_pool_size=16, rng_seed=77))
    cap = max(1, int(0.1 * ranking_trace.unique_count))
    by_policy = {
        "lru": simulate(ranking_trace, CacheConfig(cap, policy=Policy.LRU)).hit_rate,
        "lfu": simulate(ranking_trace, CacheConfig(cap, policy=Policy.LFU)).hit_rate,
        "srrip": simulate(ranking_trace, CacheConfig(cap, policy=Policy.SRRIP)).hit_rate,
        "optimal": simulate_optgen(ranking_trace, cap).hit_rate,
    }
    by_hit_rate = sorted(by_policy, key=lambda p: -by_policy[p])
    by_latency = sorted(by_policy,
                        key=lambda p: perf.estimate(noisy_model, by_policy[p]))
    assert by_hit_rate == by_latency
    _ok(9, f"noiseless rmse {model.fit_rmse:.2e}; noisy recovery within 5% "
           f"(slope {noisy_model.slope:.1f} vs {slope_true:.1f}); "
           f"latency ranking == hit-rate ranking {by_hit_rate}")


# ---------------------------------------------------------------------------
# criterion 10


def test_criterion_10_replay_algebra_and_priority_unit_examples(pipeline, monkeypatch):
    # Alg 1: bits + insertion speed
    buf = PriorityBuffer(capacity=3, total_ids=10, eviction_speed=4)
    for gid in (0, 1, 2):
        buf.add(gid, 0)
    load_embeddings(buf, [0, 1, 2], [1, 0, 1], [])
    assert buf.entries == {0: 5, 1: 4, 2: 5}
    # Alg 2: strict-min victim first, then decay-all
    victim = gpu_buffer_populate(buf)
    assert victim == 1
    assert buf.entries == {0: 4, 2: 4}
    # zero floor: all-zero tie evicts the smallest id, others stay at 0
    zbuf = PriorityBuffer(capacity=3, total_ids=10, eviction_speed=4)
    for gid in (4, 7, 9):
        zbuf.add(gid, 0)
    assert gpu_buffer_populate(zbuf) == 4
    assert zbuf.entries == {7: 0, 9: 0}

    # partition on every report the pipeline produced
    n = len(pipeline.trace.accesses)
    for report in (pipeline.lru, pipeline.cm_only, pipeline.full):
        assert report.cache_hits + report.prefetch_hits + report.on_demand == n

    # occupancy <= capacity after every chunk of an instrumented replay
    small = generate_trace(
        TraceGenConfig(table_sizes=[250] * 8, total_accesses=20_000,
                       zipf_exponent=1.05, markov_stickiness=0.5,
                       correlation_pool_size=32, rng_seed=31))
    small_cap = int(0.2 * small.unique_count)
    occupancies = []
    real = rt.load_embeddings

    def spy(buf, chunk_gids, cache_bits, prefetch_gids):
        real(buf, chunk_gids, cache_bits, prefetch_gids)
        occupancies.append(len(buf.entries))

    monkeypatch.setattr(rt, "load_embeddings", spy)
    report = rt.replay(small, BufferConfig(small_cap),
                       caching_fn=lambda s: [1] * len(s.input),
                       prefetch_fn=rt.optgen_miss_oracle(
                           small, small_cap, l_out=5))
    monkeypatch.setattr(rt, "load_embeddings", real)
    assert occupancies and max(occupancies) <= small_cap
    assert report.cache_hits + report.prefetch_hits + report.on_demand == \
        len(small.accesses)
    _ok(10, f"unit examples exact; partitions hold on all replays; "
            f"max occupancy {max(occupancies)} <= capacity {small_cap} "
            f"across {len(occupancies)} chunks")
