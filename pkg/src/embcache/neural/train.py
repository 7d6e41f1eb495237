"""Mini-batch training with adaptive per-parameter moments.

The optimizer is the standard first/second-moment scheme with bias
correction.  Runs are deterministic given the seed: batch order, parameter
init, and every update depend only on (dataset, config).  A non-finite loss
aborts the run and hands back the last good parameter state instead of
poisoning the checkpoint.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidConfigError, NumericalError
from ..labeler import LabeledDataset
from .autodiff import Tensor
from .losses import (LossConfig, LossKind, chamfer_loss_t, cross_entropy_loss_t)
from .model import (CACHING, PREFETCH, ModelParameters, batch_arrays,
                    decode_indices, forward_caching_batch,
                    forward_prefetch_batch, normalize_gids)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_steps: int = 500
    seed: int = 0
    validation_split: float = 0.2
    eval_every: int | None = None   # defaults to once per epoch
    grad_check: bool = False        # spot-check gradients on the first batch

    def validate(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_steps < 1:
            raise InvalidConfigError("learning_rate, batch_size, max_steps must be positive")
        if not 0.0 <= self.validation_split < 1.0:
            raise InvalidConfigError("validation_split must be in [0, 1)")


@dataclass
class TrainResult:
    params: ModelParameters
    loss_curve: list[tuple[int, float]] = field(default_factory=list)
    val_metrics: list[tuple[int, float]] = field(default_factory=list)
    aborted: bool = False


@dataclass
class TrainingBatch:
    """Arrays one optimization step consumes; window ids come pre-normalized."""

    gid: np.ndarray                      # (B, L_in)
    tid: np.ndarray                      # (B, L_in)
    labels: np.ndarray | None = None     # (B, L_in) 0/1, caching only
    window_norm: np.ndarray | None = None  # (B, L_win), prefetch only
    window_gids: np.ndarray | None = None  # (B, L_win) raw ids, metrics only


def make_batch(samples, table_sizes: list[int], kind: str) -> TrainingBatch:
    gid, tid = batch_arrays([s.input for s in samples])
    total = int(sum(table_sizes))
    if kind == CACHING:
        labels = np.array([s.cache_labels for s in samples], dtype=np.int64)
        return TrainingBatch(gid, tid, labels=labels)
    wgids = np.array([[a.global_id for a in s.window] for s in samples],
                     dtype=np.int64)
    return TrainingBatch(gid, tid, window_norm=normalize_gids(wgids, total),
                         window_gids=wgids)


def batch_loss_tensor(params: ModelParameters, batch: TrainingBatch,
                      loss_cfg: LossConfig) -> tuple[Tensor, dict[str, Tensor]]:
    """Forward pass to a scalar loss; returns the loss and the leaf tensors."""
    from .model import _params_as_tensors  # shared leaf construction

    leaves = _params_as_tensors(params)
    if loss_cfg.kind == LossKind.CROSS_ENTROPY:
        probs = _forward_with_leaves(params, leaves, batch, caching=True)
        return cross_entropy_loss_t(probs, batch.labels), leaves
    po = _forward_with_leaves(params, leaves, batch, caching=False)
    one_sided = loss_cfg.kind == LossKind.CHAMFER1
    return chamfer_loss_t(po, batch.window_norm, loss_cfg.alpha,
                          one_sided=one_sided), leaves


def _forward_with_leaves(params: ModelParameters, leaves: dict[str, Tensor],
                         batch: TrainingBatch, caching: bool) -> Tensor:
    # Re-implements the public forward entry points but over shared leaves,
    # so gradients can be read off after backward().
    from . import model as m

    batch_n, length = batch.gid.shape
    tokens = m._tokens_from_ids(leaves, batch.gid, batch.tid, length)
    enc_states = m._encode(leaves, tokens, params.stacks, params.dim, batch_n)
    if caching:
        outs = m._decode(leaves, tokens, enc_states, params.stacks, params.dim,
                         batch_n, causal=True)
    else:
        zeros = np.zeros((batch_n, 2 * params.dim))
        dec_inputs = [m.ad.add(leaves["slot_embed"][j, :], zeros)
                      for j in range(params.l_out)]
        outs = m._decode(leaves, dec_inputs, enc_states, params.stacks,
                         params.dim, batch_n, causal=False)
    return m.ad.concat([o.reshape((batch_n, 1)) for o in outs], axis=1)


def batch_loss_and_grads(params: ModelParameters, batch: TrainingBatch,
                         loss_cfg: LossConfig) -> tuple[float, dict[str, np.ndarray]]:
    """One backward pass; raises if any produced gradient is non-finite."""
    loss, leaves = batch_loss_tensor(params, batch, loss_cfg)
    loss.backward()
    grads = {}
    for name, leaf in leaves.items():
        g = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in parameter {name!r}")
        grads[name] = g
    return float(loss.value), grads


def batch_loss_value(params: ModelParameters, batch: TrainingBatch,
                     loss_cfg: LossConfig) -> float:
    loss, _ = batch_loss_tensor(params, batch, loss_cfg)
    return float(loss.value)


def finite_difference_check(params: ModelParameters, batch: TrainingBatch,
                            loss_cfg: LossConfig, h: float = 1e-4,
                            rtol: float = 1e-3, atol: float = 1e-6,
                            max_entries_per_array: int | None = None,
                            rng: np.random.Generator | None = None) -> float:
    """Compare every (or a sampled subset of) gradient entry against central
    finite differences.  Returns the worst relative error; raises on failure.
    """
    _, grads = batch_loss_and_grads(params, batch, loss_cfg)
    worst = 0.0
    for name, arr in params.arrays.items():
        flat = arr.reshape(-1)
        gflat = grads[name].reshape(-1)
        idxs = range(flat.size)
        if max_entries_per_array is not None and flat.size > max_entries_per_array:
            if rng is None:
                rng = np.random.default_rng(0)
            idxs = rng.choice(flat.size, size=max_entries_per_array, replace=False)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            up = batch_loss_value(params, batch, loss_cfg)
            flat[i] = orig - h
            down = batch_loss_value(params, batch, loss_cfg)
            flat[i] = orig
            fd = (up - down) / (2.0 * h)
            ad_g = gflat[i]
            err = abs(fd - ad_g)
            rel = err / max(abs(fd), abs(ad_g), 1e-12)
            if err > atol and rel > rtol:
                raise NumericalError(
                    f"gradient mismatch in {name}[{i}]: analytic {ad_g:.6g}, "
                    f"finite-difference {fd:.6g}")
            worst = max(worst, rel if err > atol else 0.0)
    return worst


def chamfer_tie_free(po_values: np.ndarray, window: np.ndarray,
                     tol: float = 1e-6) -> bool:
    """True when every nearest-neighbor assignment is unambiguous.

    Finite differences disagree with the first-minimizer subgradient only at
    genuine ties: an output sitting at a kink (distance ~0), equidistant
    between two *different* window values, or two outputs equidistant from a
    window element.  Duplicate window values are collapsed first since tying
    against an identical target yields the same gradient either way.
    """
    for po_row, w_row in zip(po_values, window):
        w_distinct = np.unique(w_row)
        d1 = np.sort(np.abs(po_row[:, None] - w_distinct[None, :]), axis=1)
        if np.any(d1[:, 0] < tol):
            return False
        if w_distinct.size > 1 and np.any(d1[:, 1] - d1[:, 0] < tol):
            return False
        d2 = np.sort(np.abs(w_row[:, None] - po_row[None, :]), axis=1)
        if np.any(d2[:, 0] < tol):
            return False
        if po_row.size > 1 and np.any(d2[:, 1] - d2[:, 0] < tol):
            return False
    return True


def _adam_update(arrays: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                 m: dict[str, np.ndarray], v: dict[str, np.ndarray],
                 step: int, lr: float):
    for name, g in grads.items():
        m[name] = ADAM_BETA1 * m[name] + (1 - ADAM_BETA1) * g
        v[name] = ADAM_BETA2 * v[name] + (1 - ADAM_BETA2) * (g * g)
        m_hat = m[name] / (1 - ADAM_BETA1 ** step)
        v_hat = v[name] / (1 - ADAM_BETA2 ** step)
        arrays[name] -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


def validation_metric(params: ModelParameters, samples, table_sizes,
                      batch_size: int = 256) -> float:
    """Caching: mean label accuracy at threshold 0.5.  Prefetch: fraction of
    decoded ids that appear in the sample's look-ahead window."""
    if not samples:
        return 0.0
    kind = params.kind
    correct = 0
    total = 0
    for lo in range(0, len(samples), batch_size):
        part = samples[lo:lo + batch_size]
        batch = make_batch(part, table_sizes, kind)
        if kind == CACHING:
            probs = forward_caching_batch(params, batch.gid, batch.tid).value
            pred = (probs >= 0.5).astype(np.int64)
            correct += int((pred == batch.labels).sum())
            total += batch.labels.size
        else:
            po = forward_prefetch_batch(params, batch.gid, batch.tid).value
            for row, wrow in zip(po, batch.window_gids):
                wset = set(int(w) for w in wrow)
                decoded = decode_indices(list(row), table_sizes)
                correct += sum(1 for d in decoded if d.global_id in wset)
                total += len(decoded)
    return correct / total if total else 0.0


def train(dataset: LabeledDataset, params: ModelParameters, train_cfg: TrainConfig,
          loss_cfg: LossConfig) -> TrainResult:
    """Optimize ``params`` in place-copy; returns final params plus curves."""
    train_cfg.validate()
    loss_cfg.validate()
    if params.kind == CACHING and loss_cfg.kind != LossKind.CROSS_ENTROPY:
        raise InvalidConfigError("caching models train with cross entropy")
    if params.kind == PREFETCH and loss_cfg.kind == LossKind.CROSS_ENTROPY:
        raise InvalidConfigError("prefetch models train with a set-distance loss")
    if not dataset.samples:
        raise InvalidConfigError("empty dataset")

    n_val = int(len(dataset.samples) * train_cfg.validation_split)
    val = dataset.samples[len(dataset.samples) - n_val:] if n_val else []
    pool = dataset.samples[:len(dataset.samples) - n_val]
    if not pool:
        raise InvalidConfigError("validation split leaves no training samples")

    rng = np.random.default_rng(train_cfg.seed)
    params = params.copy()
    last_good = params.copy()
    m_state = {k: np.zeros_like(a) for k, a in params.arrays.items()}
    v_state = {k: np.zeros_like(a) for k, a in params.arrays.items()}
    result = TrainResult(params)

    steps_per_epoch = max(1, (len(pool) + train_cfg.batch_size - 1) // train_cfg.batch_size)
    eval_every = train_cfg.eval_every or steps_per_epoch

    if train_cfg.grad_check:
        probe = make_batch(pool[:min(2, len(pool))], dataset.vocabulary, params.kind)
        finite_difference_check(params, probe, loss_cfg,
                                max_entries_per_array=4, rng=rng)

    step = 0
    while step < train_cfg.max_steps:
        order = rng.permutation(len(pool))
        for lo in range(0, len(pool), train_cfg.batch_size):
            if step >= train_cfg.max_steps:
                break
            step += 1
            sel = [pool[i] for i in order[lo:lo + train_cfg.batch_size]]
            batch = make_batch(sel, dataset.vocabulary, params.kind)
            try:
                loss, grads = batch_loss_and_grads(params, batch, loss_cfg)
            except NumericalError:
                result.params = last_good
                result.aborted = True
                return result
            if not np.isfinite(loss):
                result.params = last_good
                result.aborted = True
                return result
            result.loss_curve.append((step, loss))
            last_good = params.copy()
            _adam_update(params.arrays, grads, m_state, v_state, step,
                         train_cfg.learning_rate)
            if val and step % eval_every == 0:
                result.val_metrics.append(
                    (step, validation_metric(params, val, dataset.vocabulary)))
    if val and (not result.val_metrics or result.val_metrics[-1][0] != step):
        result.val_metrics.append(
            (step, validation_metric(params, val, dataset.vocabulary)))
    result.params = params
    return result


def write_loss_curve_csv(result: TrainResult, path: str):
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "loss"])
        for step, loss in result.loss_curve:
            w.writerow([step, f"{loss:.8f}"])
        w.writerow([])
        w.writerow(["step", "validation_metric"])
        for step, metric in result.val_metrics:
            w.writerow([step, f"{metric:.8f}"])
