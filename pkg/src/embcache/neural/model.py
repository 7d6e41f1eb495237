"""Sequence models scoring embedding accesses: keep/evict bits and prefetch ids.

Both models share one shape: token embeddings feed a stacked LSTM encoder;
a stacked LSTM decoder with additive attention over encoder states produces
per-step outputs through a shared linear head.

The caching model emits one keep probability per input position.  Its
attention is causal (a position can only attend to encoder states at or
before itself), so the score for a prefix never depends on what follows it.
The prefetch model emits ``l_out`` scalars on the normalized id scale [0, 1]
and attends over the whole input, since it runs once the chunk is complete.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidConfigError, OutOfVocabularyError
from ..trace import EmbeddingIndex, index_of_global
from . import autodiff as ad
from .autodiff import Tensor

CACHING = "caching"
PREFETCH = "prefetch"


@dataclass
class ModelParameters:
    """Flat named parameter store plus the hyperparameters that shaped it."""

    kind: str
    table_sizes: list[int]
    dim: int = 32
    stacks: int = 1
    l_in: int = 15
    l_out: int = 5
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def total_ids(self) -> int:
        return int(sum(self.table_sizes))

    @property
    def param_count(self) -> int:
        return int(sum(a.size for a in self.arrays.values()))

    def copy(self) -> "ModelParameters":
        return ModelParameters(self.kind, list(self.table_sizes), self.dim,
                               self.stacks, self.l_in, self.l_out,
                               {k: v.copy() for k, v in self.arrays.items()})


def _shapes(kind: str, total_ids: int, table_count: int, dim: int, stacks: int,
            l_out: int) -> dict[str, tuple[int, ...]]:
    d = dim
    token = 2 * d  # id embedding ++ table embedding
    shapes: dict[str, tuple[int, ...]] = {
        "embed_id": (total_ids, d),
        "embed_table": (table_count, d),
        "att_enc": (d, d),
        "att_dec": (d, d),
        "att_v": (d, 1),
        "comb_w": (2 * d, d),
        "comb_b": (d,),
        "head_w": (d, 1),
        "head_b": (1,),
    }
    for k in range(stacks):
        enc_in = token if k == 0 else d
        dec_in = token + d if k == 0 else d  # token ++ attention context
        shapes[f"enc{k}_wx"] = (enc_in, 4 * d)
        shapes[f"enc{k}_wh"] = (d, 4 * d)
        shapes[f"enc{k}_b"] = (4 * d,)
        shapes[f"dec{k}_wx"] = (dec_in, 4 * d)
        shapes[f"dec{k}_wh"] = (d, 4 * d)
        shapes[f"dec{k}_b"] = (4 * d,)
    if kind == PREFETCH:
        shapes["slot_embed"] = (l_out, token)
    return shapes


def init_params(kind: str, table_sizes: list[int], dim: int = 32,
                stacks: int | None = None, l_in: int = 15, l_out: int = 5,
                seed: int = 0, init_scale: float = 0.08) -> ModelParameters:
    """Uniform(-scale, scale) initialization of every array, from one seed."""
    if kind not in (CACHING, PREFETCH):
        raise InvalidConfigError(f"unknown model kind {kind!r}")
    if stacks is None:
        stacks = 1 if kind == CACHING else 2
    if dim < 1 or stacks < 1 or l_in < 1 or l_out < 1:
        raise InvalidConfigError("dim, stacks, l_in, l_out must be >= 1")
    rng = np.random.default_rng(seed)
    total = int(sum(table_sizes))
    shapes = _shapes(kind, total, len(table_sizes), dim, stacks, l_out)
    arrays = {
        name: rng.uniform(-init_scale, init_scale, size=shape)
        for name, shape in shapes.items()
    }
    return ModelParameters(kind, list(table_sizes), dim, stacks, l_in, l_out, arrays)


def _lstm_step(x: Tensor, h: Tensor, c: Tensor, wx: Tensor, wh: Tensor,
               b: Tensor, d: int):
    z = ad.add(ad.add(ad.matmul(x, wx), ad.matmul(h, wh)), b)
    i = ad.sigmoid(z[:, 0 * d:1 * d])
    f = ad.sigmoid(z[:, 1 * d:2 * d])
    g = ad.tanh(z[:, 2 * d:3 * d])
    o = ad.sigmoid(z[:, 3 * d:4 * d])
    c_new = ad.add(ad.mul(f, c), ad.mul(i, g))
    h_new = ad.mul(o, ad.tanh(c_new))
    return h_new, c_new


def _attend(h_prev: Tensor, enc_pre: Tensor, enc_stack: Tensor, att_dec: Tensor,
            att_v: Tensor, mask: np.ndarray | None, batch: int, length: int):
    """Additive attention: softmax over v^T tanh(W_enc H + W_dec h)."""
    query = ad.matmul(h_prev, att_dec).reshape((batch, 1, -1))
    scores = ad.matmul(ad.tanh(ad.add(enc_pre, query)), att_v).reshape((batch, length))
    if mask is not None:
        scores = ad.add(scores, mask)
    attn = ad.softmax(scores, axis=1)
    context = ad.tsum(ad.mul(attn.reshape((batch, length, 1)), enc_stack), axis=1)
    return context


def _params_as_tensors(params: ModelParameters) -> dict[str, Tensor]:
    return {name: Tensor(arr) for name, arr in params.arrays.items()}


def _encode(p: dict[str, Tensor], tokens: list[Tensor], stacks: int, d: int,
            batch: int):
    """Run the encoder stack; returns top-layer states per position."""
    zero = Tensor(np.zeros((batch, d)))
    hs = [zero] * stacks
    cs = [zero] * stacks
    top_states = []
    for x in tokens:
        inp = x
        for k in range(stacks):
            hs[k], cs[k] = _lstm_step(inp, hs[k], cs[k], p[f"enc{k}_wx"],
                                      p[f"enc{k}_wh"], p[f"enc{k}_b"], d)
            inp = hs[k]
        top_states.append(hs[-1])
    return top_states


def _tokens_from_ids(p: dict[str, Tensor], gid: np.ndarray, tid: np.ndarray,
                     length: int) -> list[Tensor]:
    id_emb = ad.embedding(p["embed_id"], gid)      # (B, L, d)
    table_emb = ad.embedding(p["embed_table"], tid)
    tokens = ad.concat([id_emb, table_emb], axis=2)
    return [tokens[:, t, :] for t in range(length)]


def _decode(p: dict[str, Tensor], dec_inputs: list[Tensor], enc_states: list[Tensor],
            stacks: int, d: int, batch: int, causal: bool) -> list[Tensor]:
    length = len(enc_states)
    enc_stack = ad.concat([h.reshape((batch, 1, d)) for h in enc_states], axis=1)
    enc_pre = ad.matmul(enc_stack, p["att_enc"])
    zero = Tensor(np.zeros((batch, d)))
    hs = [zero] * stacks
    cs = [zero] * stacks
    outputs = []
    for t, x in enumerate(dec_inputs):
        mask = None
        if causal and t + 1 < length:
            mask = np.zeros((1, length))
            mask[:, t + 1:] = -1e9
        context = _attend(hs[-1], enc_pre, enc_stack, p["att_dec"], p["att_v"],
                          mask, batch, length)
        inp = ad.concat([x, context], axis=1)
        for k in range(stacks):
            hs[k], cs[k] = _lstm_step(inp, hs[k], cs[k], p[f"dec{k}_wx"],
                                      p[f"dec{k}_wh"], p[f"dec{k}_b"], d)
            inp = hs[k]
        combined = ad.tanh(ad.add(ad.matmul(ad.concat([hs[-1], context], axis=1),
                                            p["comb_w"]), p["comb_b"]))
        out = ad.sigmoid(ad.add(ad.matmul(combined, p["head_w"]), p["head_b"]))
        outputs.append(out.reshape((batch,)))
    return outputs


def forward_caching_batch(params: ModelParameters, gid: np.ndarray,
                          tid: np.ndarray) -> Tensor:
    """Keep probabilities, shape (batch, l_in); graph-producing path."""
    if params.kind != CACHING:
        raise InvalidConfigError("forward_caching needs a caching model")
    batch, length = gid.shape
    p = _params_as_tensors(params)
    tokens = _tokens_from_ids(p, gid, tid, length)
    enc_states = _encode(p, tokens, params.stacks, params.dim, batch)
    outs = _decode(p, tokens, enc_states, params.stacks, params.dim, batch,
                   causal=True)
    probs = ad.concat([o.reshape((batch, 1)) for o in outs], axis=1)
    return probs


def forward_prefetch_batch(params: ModelParameters, gid: np.ndarray,
                           tid: np.ndarray) -> Tensor:
    """Normalized id predictions, shape (batch, l_out); graph-producing path."""
    if params.kind != PREFETCH:
        raise InvalidConfigError("forward_prefetch needs a prefetch model")
    batch, length = gid.shape
    p = _params_as_tensors(params)
    tokens = _tokens_from_ids(p, gid, tid, length)
    enc_states = _encode(p, tokens, params.stacks, params.dim, batch)
    zeros = np.zeros((batch, 2 * params.dim))
    dec_inputs = [ad.add(p["slot_embed"][j, :], zeros) for j in range(params.l_out)]
    outs = _decode(p, dec_inputs, enc_states, params.stacks, params.dim, batch,
                   causal=False)
    return ad.concat([o.reshape((batch, 1)) for o in outs], axis=1)


def _check_inputs(params: ModelParameters, inputs: list[EmbeddingIndex]):
    offsets = np.concatenate(([0], np.cumsum(params.table_sizes)))
    for a in inputs:
        if not 0 <= a.table_id < len(params.table_sizes):
            raise OutOfVocabularyError(f"table_id {a.table_id} outside vocabulary")
        if not 0 <= a.row_id < params.table_sizes[a.table_id]:
            raise OutOfVocabularyError(
                f"row_id {a.row_id} outside table {a.table_id}")
        if a.global_id != offsets[a.table_id] + a.row_id:
            raise OutOfVocabularyError(
                f"global_id {a.global_id} inconsistent with (table, row)")


def batch_arrays(samples_inputs: list[list[EmbeddingIndex]]):
    gid = np.array([[a.global_id for a in s] for s in samples_inputs], dtype=np.int64)
    tid = np.array([[a.table_id for a in s] for s in samples_inputs], dtype=np.int64)
    return gid, tid


def forward_caching(params: ModelParameters, inputs: list[EmbeddingIndex]) -> list[float]:
    """Keep probability per input position, for one sample."""
    _check_inputs(params, inputs)
    gid, tid = batch_arrays([inputs])
    probs = forward_caching_batch(params, gid, tid)
    return [float(x) for x in probs.value[0]]


def forward_prefetch(params: ModelParameters, inputs: list[EmbeddingIndex]) -> list[float]:
    """``l_out`` continuous id predictions on the normalized [0, 1] scale."""
    _check_inputs(params, inputs)
    gid, tid = batch_arrays([inputs])
    po = forward_prefetch_batch(params, gid, tid)
    return [float(x) for x in po.value[0]]


def decode_indices(po: list[float], table_sizes: list[int]) -> list[EmbeddingIndex]:
    """De-normalize, round to the nearest id, clamp into range, split per table."""
    total = int(sum(table_sizes))
    out = []
    for x in po:
        gid = int(np.floor(float(x) * (total - 1) + 0.5))
        gid = min(max(gid, 0), total - 1)
        out.append(index_of_global(gid, table_sizes))
    return out


def normalize_gids(gids: np.ndarray, total_ids: int) -> np.ndarray:
    """Map integer ids onto the [0, 1] scale the prefetch head predicts."""
    if total_ids < 2:
        return np.zeros_like(gids, dtype=np.float64)
    return gids.astype(np.float64) / (total_ids - 1)
