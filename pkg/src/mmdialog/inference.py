"""Shared generation pipeline: context assembly -> encode -> beam decode."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bpe import Vocab
from .data import ControlSettings, Episode, assemble_context
from .decoding import BeamConfig, generate
from .model import ModelConfig, encode


@dataclass
class ModelBundle:
    """Everything needed to answer one episode."""
    params: dict
    config: ModelConfig
    vocab: Vocab
    beam: BeamConfig = field(default_factory=BeamConfig)
    feature_fn: object = None          # image_id -> ImageFeatures, or None


def generate_reply(bundle: ModelBundle, episode: Episode,
                   controls: ControlSettings | None = None,
                   counters=None):
    """Beam-decode a reply to one episode; returns (text, Hypothesis)."""
    context = assemble_context(episode, controls)
    ids = bundle.vocab.encode(context)
    if not ids:
        ids = [bundle.vocab.bos_id]
    max_ctx = bundle.config.max_positions
    if len(ids) > max_ctx:
        ids = ids[-max_ctx:]
    input_ids = np.array([ids], dtype=np.int64)
    input_mask = np.ones_like(input_ids, dtype=bool)
    feats = None
    if bundle.config.fusion != "none" and episode.image_ref is not None:
        if bundle.feature_fn is None:
            raise ValueError("bundle has no feature source for image episodes")
        feats = [bundle.feature_fn(episode.image_ref)]
    memory, memory_mask = encode(bundle.params, bundle.config,
                                 input_ids, input_mask, feats_list=feats)
    hyp = generate(bundle.params, bundle.config, bundle.vocab,
                   memory, memory_mask, ids, bundle.beam, counters)
    text = bundle.vocab.decode(hyp.surface_tokens)
    return text, hyp
