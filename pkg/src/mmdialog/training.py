"""Staged training driver: sampling, optimization, validation, early stop.

The loop is sample -> batch -> loss -> Adam step, with periodic validation
perplexity and patience-based early stopping. Fixed seeds plus
single-threaded execution make runs bit-reproducible on one platform.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .autograd import AdamState, NumericsError, adam_step
from .bpe import Vocab
from .data import ControlSettings, make_batch, multitask_sampler
from .imagefeat import synth_features
from .metrics import perplexity
from .model import ModelConfig, forward_loss, init_params
from .safety import (GenderLexicon, StyleRegistry, bucket_replace,
                     classify_gender)
from .checkpoint import params_hash, save_checkpoint, load_checkpoint


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    stage: str = "finetune"              # adapt_pretrain | finetune
    lr: float = 1e-5
    warmup_steps: int = 100
    max_steps: int = 2000
    batch_size: int = 8
    eval_interval: int = 200
    patience: int = 3
    seed: int = 0
    max_len: int = 64
    include_style: bool = False
    style_p_replace: float | None = None  # None = no bucket replacement
    degender: bool = False
    no_image: bool = False               # strip image features end to end
    feature_seed: int = 0
    target_ppl: float | None = None      # stop once val ppl reaches this

    def __post_init__(self):
        if self.stage not in ("adapt_pretrain", "finetune"):
            raise TrainingError(f"unknown stage {self.stage!r}")


@dataclass
class TrainResult:
    params: dict
    best_val_ppl: float
    log: list = field(default_factory=list)
    stopped_early: bool = False
    diverged: bool = False


def episode_controls(ep, tcfg: TrainConfig, registry, lexicon, rng) -> ControlSettings:
    """Conditioning for one training episode: optional style (possibly
    bucket-replaced) and gender tokens derived from the label."""
    style_text = None
    if tcfg.include_style and ep.style is not None:
        style_text = ep.style
        if tcfg.style_p_replace is not None:
            style_text = bucket_replace(ep.style, registry, rng,
                                        tcfg.style_p_replace)
    gender = None
    if tcfg.degender:
        _, gender = classify_gender(ep.label, lexicon)
    return ControlSettings(include_style=tcfg.include_style,
                           style_text=style_text, gender_tokens=gender)


def _episode_features(episodes, config: ModelConfig, tcfg: TrainConfig,
                      feature_fn=None):
    if config.fusion == "none" or tcfg.no_image:
        return None
    fn = feature_fn or (lambda iid: synth_features(
        iid, config.feature_kind, tcfg.feature_seed))
    if all(ep.image_ref is None for ep in episodes):
        return None
    # mixed batches get an all-zero block for imageless episodes so the
    # fused shapes stay uniform
    from .imagefeat import FEATURE_DIM, KIND_ROWS, ImageFeatures
    blank = ImageFeatures(
        kind=config.feature_kind,
        matrix=np.zeros((KIND_ROWS[config.feature_kind], FEATURE_DIM),
                        dtype=np.float32),
        image_id="")
    return [fn(ep.image_ref) if ep.image_ref is not None else blank
            for ep in episodes]


def train(params, config: ModelConfig, vocab: Vocab, datasets,
          val_episodes, tcfg: TrainConfig, feature_fn=None,
          registry: StyleRegistry | None = None,
          lexicon: GenderLexicon | None = None,
          log_file=None) -> TrainResult:
    """Run one training stage; `datasets` is [(role, episodes, weight)].

    Returns the best-validation checkpoint (falling back to the final
    parameters when validation never ran).
    """
    registry = registry or StyleRegistry.load_default()
    lexicon = lexicon or GenderLexicon.load_default()
    sampler = multitask_sampler(datasets, seed=tcfg.seed)
    ctl_rng = np.random.default_rng(tcfg.seed + 1)
    state = AdamState(params, lr=tcfg.lr, warmup_steps=tcfg.warmup_steps)
    log: list[dict] = []
    best_ppl = math.inf
    best_params = None
    bad_evals = 0
    stopped_early = diverged = False

    def snapshot():
        return {k: copy.deepcopy(p.data) for k, p in params.items()}

    def validate():
        ctls = [episode_controls(ep, tcfg, registry, lexicon,
                                 np.random.default_rng(tcfg.seed + 2))
                for ep in val_episodes]
        feats = _episode_features(val_episodes, config, tcfg, feature_fn)
        return perplexity(params, config, vocab, val_episodes,
                          controls=ctls, features=feats,
                          max_len=tcfg.max_len)

    last_good = snapshot()
    for step in range(1, tcfg.max_steps + 1):
        episodes = [next(sampler) for _ in range(tcfg.batch_size)]
        controls = [episode_controls(ep, tcfg, registry, lexicon, ctl_rng)
                    for ep in episodes]
        feats = _episode_features(episodes, config, tcfg, feature_fn)
        batch = make_batch(episodes, vocab, tcfg.max_len,
                           controls=controls, features=feats)
        try:
            for p in params.values():
                p.grad = None
            loss, _ = forward_loss(params, config, batch)
            loss.backward()
            grads = {k: p.grad for k, p in params.items()
                     if p.grad is not None}
            adam_step(params, grads, state)
        except NumericsError:
            diverged = True
            for k, p in params.items():
                p.data = last_good[k]
            break
        lr_t = state.lr * min(1.0, state.step / state.warmup_steps) \
            if state.warmup_steps else state.lr
        entry = {"step": step, "loss": float(loss.data), "lr": lr_t}
        last_good = snapshot()

        if val_episodes and step % tcfg.eval_interval == 0:
            val_ppl = validate()
            entry["val_ppl"] = val_ppl
            if val_ppl < best_ppl:
                best_ppl = val_ppl
                best_params = snapshot()
                bad_evals = 0
                if tcfg.target_ppl is not None and val_ppl <= tcfg.target_ppl:
                    log.append(entry)
                    if log_file:
                        log_file.write(json.dumps(entry) + "\n")
                    break
            else:
                bad_evals += 1
                if bad_evals >= tcfg.patience:
                    log.append(entry)
                    if log_file:
                        log_file.write(json.dumps(entry) + "\n")
                    stopped_early = True
                    break
        log.append(entry)
        if log_file:
            log_file.write(json.dumps(entry) + "\n")

    if best_params is not None:
        for k, p in params.items():
            p.data = best_params[k]
    return TrainResult(params=params, best_val_ppl=best_ppl, log=log,
                       stopped_early=stopped_early, diverged=diverged)


def staged_pipeline(config: ModelConfig, vocab: Vocab,
                    adapt_datasets, adapt_val, adapt_cfg: TrainConfig,
                    finetune_datasets, finetune_val, finetune_cfg: TrainConfig,
                    seed: int = 0, feature_fn=None,
                    checkpoint_path=None):
    """Domain-adaptive pre-training followed by fine-tuning.

    Returns (params, provenance) where provenance records both stage
    hashes. Stage-1 failure aborts stage 2.
    """
    params = init_params(config, seed=seed)
    r1 = train(params, config, vocab, adapt_datasets, adapt_val,
               adapt_cfg, feature_fn=feature_fn)
    if r1.diverged:
        raise TrainingError("adapt_pretrain stage diverged; aborting")
    provenance = [{"stage": "adapt_pretrain", "seed": adapt_cfg.seed,
                   "lr": adapt_cfg.lr, "steps": len(r1.log),
                   "params_hash": params_hash(r1.params)}]
    r2 = train(r1.params, config, vocab, finetune_datasets, finetune_val,
               finetune_cfg, feature_fn=feature_fn)
    provenance.append({"stage": "finetune", "seed": finetune_cfg.seed,
                       "lr": finetune_cfg.lr, "steps": len(r2.log),
                       "params_hash": params_hash(r2.params)})
    if checkpoint_path:
        save_checkpoint(checkpoint_path, r2.params, config, vocab,
                        provenance=provenance)
    return r2.params, provenance
