"""Checkpoint serialization: JSON header plus little-endian f32 blob.

Layout: u32 header length | header JSON (config, vocab hash, parameter
manifest with shapes and byte offsets, provenance) | raw parameter bytes.
Loading validates every manifest shape against the config's expectation.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .autograd import Tensor
from .bpe import Vocab
from .model import ModelConfig, init_params


class CheckpointError(ValueError):
    pass


def vocab_hash(vocab: Vocab) -> str:
    payload = json.dumps(vocab.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()


def params_hash(params: dict) -> str:
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name].data, dtype="<f4").tobytes())
    return h.hexdigest()


def save_checkpoint(path, params: dict, config: ModelConfig, vocab: Vocab,
                    provenance=None) -> None:
    manifest = {}
    offset = 0
    blobs = []
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name].data, dtype="<f4")
        manifest[name] = {"shape": list(arr.shape), "offset": offset,
                          "nbytes": arr.nbytes}
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({
        "config": config.to_dict(),
        "vocab": vocab.to_dict(),
        "vocab_hash": vocab_hash(vocab),
        "manifest": manifest,
        "provenance": provenance or [],
    }).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path, expected_config: ModelConfig | None = None):
    """Returns (params, config, vocab, provenance)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise CheckpointError(f"{path}: truncated header length")
    (hlen,) = struct.unpack("<I", raw[:4])
    if len(raw) < 4 + hlen:
        raise CheckpointError(f"{path}: truncated header")
    header = json.loads(raw[4:4 + hlen].decode("utf-8"))
    config = ModelConfig.from_dict(header["config"])
    vocab = Vocab.from_dict(header["vocab"])
    if vocab_hash(vocab) != header["vocab_hash"]:
        raise CheckpointError(f"{path}: vocab hash mismatch")
    if expected_config is not None and config.to_dict() != expected_config.to_dict():
        raise CheckpointError(
            f"{path}: checkpoint config does not match the requested config")
    # shapes the config implies, from a throwaway init
    expected_shapes = {k: v.data.shape
                       for k, v in init_params(config, seed=0).items()}
    manifest = header["manifest"]
    if set(manifest) != set(expected_shapes):
        raise CheckpointError(f"{path}: parameter set does not match config")
    blob = raw[4 + hlen:]
    params = {}
    for name, entry in manifest.items():
        shape = tuple(entry["shape"])
        if shape != expected_shapes[name]:
            raise CheckpointError(
                f"{path}: shape of {name} is {shape}, "
                f"config requires {expected_shapes[name]}")
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(blob):
            raise CheckpointError(f"{path}: blob truncated at {name}")
        arr = np.frombuffer(blob[start:start + nbytes], dtype="<f4")
        if arr.size != int(np.prod(shape)):
            raise CheckpointError(f"{path}: byte count mismatch for {name}")
        params[name] = Tensor(arr.reshape(shape).copy(), requires_grad=True)
    return params, config, vocab, header["provenance"]
