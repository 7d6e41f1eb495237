"""Trace-driven caching and learned prefetching for embedding-heavy serving.

The pipeline: generate or ingest an access trace, study its locality, label
it against an offline-optimal cache, train small sequence models to imitate
that optimum (keep/evict bits) and to anticipate its misses (prefetch ids),
then replay traffic through a priority-managed buffer the two models steer.
"""
from .analysis import (ReuseDistanceReport, frequency_cdf, lru_hit_count,
                       naive_reuse_distances, reuse_distances)
from .cache_sim import (CacheConfig, Policy, SimResult, brute_force_optimal,
                        simulate, simulate_optgen, sweep)
from .errors import (CheckpointError, DegenerateFitError, EmbcacheError,
                     InvalidConfigError, MissingArtifactError, NumericalError,
                     OutOfVocabularyError, TraceParseError, TraceValidationError,
                     VocabularyMismatchError)
from .labeler import (LabeledDataset, label_caching, label_prefetch,
                      read_dataset, split_dataset, write_dataset)
from .neural import (LossConfig, LossKind, ModelParameters, TrainConfig,
                     TrainResult, chamfer_loss, chamfer_one_sided,
                     cross_entropy_loss, decode_indices, forward_caching,
                     forward_prefetch, init_params, load_checkpoint,
                     save_checkpoint, train)
from .runtime import (BreakdownReport, BufferConfig, PriorityBuffer, coverage,
                      correctness_vs_window, gpu_buffer_populate,
                      load_embeddings, optgen_miss_oracle, replay,
                      replay_policy_only)
from .trace import (EmbeddingIndex, SequenceSample, Trace, TraceGenConfig,
                    chunk, generate_trace, index_of_global, make_index,
                    read_trace, trace_from_gids, write_trace)

__version__ = "0.1.0"
