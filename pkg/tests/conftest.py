import numpy as np
import pytest

from embcache import TraceGenConfig, generate_trace, trace_from_gids


def letters(text: str):
    """'ABCABC' -> [0, 1, 2, 0, 1, 2]."""
    return [ord(ch) - ord("A") for ch in text]


def letter_trace(text: str, table_size: int | None = None):
    gids = letters(text)
    size = table_size if table_size is not None else max(gids) + 1
    return trace_from_gids(gids, [size])


def random_gid_trace(rng: np.random.Generator, n: int, universe: int):
    gids = rng.integers(0, universe, size=n)
    return trace_from_gids(gids, [universe])


@pytest.fixture(scope="session")
def correlated_trace():
    """Medium Markov-correlated Zipf trace shared across slow tests."""
    cfg = TraceGenConfig(table_sizes=[4, 100, 60], total_accesses=4000,
                         zipf_exponent=1.05, markov_stickiness=0.4,
                         correlation_pool_size=24, rng_seed=11)
    return generate_trace(cfg)
