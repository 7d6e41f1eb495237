"""Checkpoint files: a self-describing header plus bit-exact parameter arrays.

The container is a numpy .npz archive.  One reserved entry, ``__meta__``,
holds a JSON header with the hyperparameters, the vocabulary (table sizes),
and a hash of that vocabulary.  Loading for inference against a different
vocabulary is refused: embedding rows are positional, so a mismatched
vocabulary silently permutes meaning.
"""
from __future__ import annotations

import hashlib
import json
import os
import zipfile

import numpy as np

from ..errors import CheckpointError, MissingArtifactError, VocabularyMismatchError
from .model import ModelParameters

_META_KEY = "__meta__"
_FORMAT = "embcache-checkpoint-v1"


def vocabulary_hash(table_sizes: list[int]) -> str:
    text = ",".join(str(int(s)) for s in table_sizes)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def save_checkpoint(params: ModelParameters, path: str):
    meta = {
        "format": _FORMAT,
        "kind": params.kind,
        "dim": params.dim,
        "stacks": params.stacks,
        "l_in": params.l_in,
        "l_out": params.l_out,
        "table_sizes": [int(s) for s in params.table_sizes],
        "vocab_hash": vocabulary_hash(params.table_sizes),
        "arrays": {name: list(a.shape) for name, a in params.arrays.items()},
    }
    payload = {name: a for name, a in params.arrays.items()}
    payload[_META_KEY] = np.array(json.dumps(meta))
    with open(path, "wb") as f:
        np.savez(f, **payload)


def load_checkpoint(path: str, table_sizes: list[int] | None = None) -> ModelParameters:
    """Read a checkpoint; refuses vocabulary mismatches when one is expected."""
    if not os.path.exists(path):
        raise MissingArtifactError(f"checkpoint {path!r} does not exist")
    try:
        with np.load(path, allow_pickle=False) as archive:
            if _META_KEY not in archive:
                raise CheckpointError(f"{path!r} has no header entry")
            try:
                meta = json.loads(str(archive[_META_KEY]))
            except json.JSONDecodeError as e:
                raise CheckpointError(f"{path!r} header is not valid JSON: {e}")
            arrays = {name: archive[name] for name in archive.files
                      if name != _META_KEY}
    except (zipfile.BadZipFile, OSError, ValueError) as e:
        raise CheckpointError(f"{path!r} is not a readable checkpoint: {e}")

    if meta.get("format") != _FORMAT:
        raise CheckpointError(f"{path!r} has unknown format {meta.get('format')!r}")
    declared = meta.get("arrays", {})
    for name, shape in declared.items():
        if name not in arrays or list(arrays[name].shape) != shape:
            raise CheckpointError(f"{path!r} array {name!r} missing or misshaped")
    stored_sizes = meta.get("table_sizes")
    if stored_sizes is None or meta.get("vocab_hash") != vocabulary_hash(stored_sizes):
        raise CheckpointError(f"{path!r} vocabulary hash does not match header")
    if table_sizes is not None and vocabulary_hash(table_sizes) != meta["vocab_hash"]:
        raise VocabularyMismatchError(
            f"checkpoint vocabulary {stored_sizes} does not match expected "
            f"{list(table_sizes)}")
    return ModelParameters(meta["kind"], stored_sizes, meta["dim"], meta["stacks"],
                           meta["l_in"], meta["l_out"], arrays)
