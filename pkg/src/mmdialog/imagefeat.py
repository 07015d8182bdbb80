"""Image feature storage, synthesis, and projection.

Real feature extraction (CNN / detector backbones) is out of scope; features
arrive from a binary store or a deterministic synthesizer. Feature matrices
are frozen: only the projection into the embedding space is trainable.

Store file layout (little-endian):
  magic "MMFEAT01" | u8 kind | u32 entry count |
  per entry: u16 id length | id bytes (UTF-8) | rows*2048 f32
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, matmul

FEATURE_DIM = 2048
MAGIC = b"MMFEAT01"

KIND_ROWS = {"global": 1, "spatial": 49, "region": 100}
KIND_CODE = {"global": 0, "spatial": 1, "region": 2}
CODE_KIND = {v: k for k, v in KIND_CODE.items()}


class FeatureNotFound(KeyError):
    pass


class FeatureFormatError(ValueError):
    pass


@dataclass
class ImageFeatures:
    kind: str                 # global | spatial | region
    matrix: np.ndarray        # [rows, 2048] f32
    image_id: str

    def __post_init__(self):
        rows = KIND_ROWS[self.kind]
        if self.matrix.shape != (rows, FEATURE_DIM):
            raise FeatureFormatError(
                f"{self.kind} features must be {rows}x{FEATURE_DIM}, "
                f"got {self.matrix.shape}")
        if not np.all(np.isfinite(self.matrix)):
            raise FeatureFormatError(f"non-finite features for {self.image_id}")


def synth_features(image_id: str, kind: str, seed: int = 0) -> ImageFeatures:
    """Deterministic pseudo-features keyed by (image_id, seed).

    Seeding goes through a fixed-width hash so results are stable across
    platforms and runs.
    """
    digest = hashlib.sha256(f"{image_id}\x00{seed}".encode()).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    rows = KIND_ROWS[kind]
    matrix = rng.standard_normal((rows, FEATURE_DIM)).astype(np.float32)
    return ImageFeatures(kind=kind, matrix=matrix, image_id=image_id)


def write_store(path, feats_list, kind: str) -> None:
    """Write a feature store file plus its sidecar index."""
    index = {}
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B", KIND_CODE[kind]))
        fh.write(struct.pack("<I", len(feats_list)))
        for f in feats_list:
            if f.kind != kind:
                raise FeatureFormatError("mixed feature kinds in one store")
            idb = f.image_id.encode("utf-8")
            index[f.image_id] = fh.tell()
            fh.write(struct.pack("<H", len(idb)))
            fh.write(idb)
            fh.write(f.matrix.astype("<f4").tobytes())
    with open(_index_path(path), "w") as fh:
        json.dump(index, fh)


def _index_path(path):
    return str(path) + ".idx"


class FeatureStore:
    """Read-only random access into a feature file; safe for many readers."""

    def __init__(self, path):
        self.path = str(path)
        self._fh = open(path, "rb")
        header = self._fh.read(len(MAGIC) + 5)
        if len(header) < len(MAGIC) + 5 or header[:len(MAGIC)] != MAGIC:
            raise FeatureFormatError(f"{path}: bad magic/header")
        code = header[len(MAGIC)]
        if code not in CODE_KIND:
            raise FeatureFormatError(f"{path}: unknown kind code {code}")
        self.kind = CODE_KIND[code]
        self.count = struct.unpack("<I", header[len(MAGIC) + 1:])[0]
        self.rows = KIND_ROWS[self.kind]
        if os.path.exists(_index_path(path)):
            with open(_index_path(path)) as fh:
                self.index = json.load(fh)
        else:
            self.index = self._rebuild_index()

    def _rebuild_index(self) -> dict:
        index = {}
        self._fh.seek(len(MAGIC) + 5)
        entry_bytes = self.rows * FEATURE_DIM * 4
        for _ in range(self.count):
            offset = self._fh.tell()
            head = self._fh.read(2)
            if len(head) < 2:
                raise FeatureFormatError(
                    f"{self.path}: truncated entry header at offset {offset}")
            (idlen,) = struct.unpack("<H", head)
            idb = self._fh.read(idlen)
            if len(idb) < idlen:
                raise FeatureFormatError(
                    f"{self.path}: truncated id at offset {offset}")
            index[idb.decode("utf-8")] = offset
            end = self._fh.seek(entry_bytes, 1)
            if end > os.path.getsize(self.path):
                raise FeatureFormatError(
                    f"{self.path}: truncated matrix at offset {offset}")
        return index

    def ids(self) -> list[str]:
        return sorted(self.index)

    def load(self, image_id: str) -> ImageFeatures:
        if image_id not in self.index:
            raise FeatureNotFound(image_id)
        offset = self.index[image_id]
        self._fh.seek(offset)
        (idlen,) = struct.unpack("<H", self._fh.read(2))
        self._fh.seek(idlen, 1)
        raw = self._fh.read(self.rows * FEATURE_DIM * 4)
        if len(raw) < self.rows * FEATURE_DIM * 4:
            raise FeatureFormatError(
                f"{self.path}: truncated matrix at offset {offset}")
        matrix = np.frombuffer(raw, dtype="<f4").reshape(self.rows, FEATURE_DIM)
        return ImageFeatures(kind=self.kind, matrix=matrix.copy(),
                             image_id=image_id)

    def close(self):
        self._fh.close()


def project(feats: ImageFeatures, W: Tensor, b: Tensor) -> Tensor:
    """Affine map of each feature row into the embedding space.

    The feature matrix is constant (frozen backbone); only W and b take
    gradient.
    """
    if W.shape[0] != FEATURE_DIM:
        raise FeatureFormatError(
            f"projection expects {FEATURE_DIM}-dim rows, W is {W.shape}")
    x = Tensor(feats.matrix.astype(W.dtype))
    return matmul(x, W) + b
