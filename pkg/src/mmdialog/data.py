"""Episode ingestion, context assembly, batching, and multi-task sampling."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .bpe import Vocab

DATASET_ROLES = ("convai2", "ed", "wow", "bst", "image_chat", "coco", "reddit")
IMAGE_ROLES = ("image_chat", "coco")


class DataError(ValueError):
    pass


@dataclass
class Episode:
    """One dialogue or caption example."""
    dataset_role: str
    context_turns: list[str]
    label: str
    persona_lines: list[str] = field(default_factory=list)
    knowledge: str | None = None
    image_ref: str | None = None
    style: str | None = None

    def __post_init__(self):
        if self.dataset_role not in DATASET_ROLES:
            raise DataError(f"unknown dataset_role {self.dataset_role!r}")
        if not self.label:
            raise DataError("episode label must be non-empty")
        if (self.image_ref is not None) != (self.dataset_role in IMAGE_ROLES):
            raise DataError(
                f"image_ref must be present iff role in {IMAGE_ROLES}")
        if self.style is not None and self.dataset_role != "image_chat":
            raise DataError("style allowed only for image_chat episodes")

    def to_dict(self) -> dict:
        d = {"dataset_role": self.dataset_role,
             "context_turns": self.context_turns, "label": self.label}
        if self.persona_lines:
            d["persona_lines"] = self.persona_lines
        if self.knowledge is not None:
            d["knowledge"] = self.knowledge
        if self.image_ref is not None:
            d["image_ref"] = self.image_ref
        if self.style is not None:
            d["style"] = self.style
        return d


def load_episodes(path, include_knowledge: bool = True) -> list[Episode]:
    """Read JSON Lines episodes; unknown roles or bad fields are rejected."""
    episodes = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{lineno}: bad JSON: {e}") from None
            if not include_knowledge:
                raw.pop("knowledge", None)
            try:
                episodes.append(Episode(**raw))
            except (DataError, TypeError) as e:
                raise DataError(f"{path}:{lineno}: {e}") from None
    return episodes


def save_episodes(episodes, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ep in episodes:
            fh.write(json.dumps(ep.to_dict(), ensure_ascii=False) + "\n")


@dataclass
class ControlSettings:
    """Conditioning applied when flattening an episode into model input.

    `style_text` overrides the episode's own style (used for bucket
    replacement); `gender_tokens` is the two-axis control string, e.g.
    "f0 m0", appended last when degendering is on.
    """
    include_style: bool = False
    style_text: str | None = None
    gender_tokens: str | None = None


def assemble_context(ep: Episode, controls: ControlSettings | None = None) -> str:
    """Deterministic flat layout: persona, knowledge, turns, style, gender."""
    controls = controls or ControlSettings()
    lines = [f"your persona: {p}" for p in ep.persona_lines]
    if ep.knowledge:
        lines.append(ep.knowledge)
    lines.extend(ep.context_turns)
    if controls.include_style:
        style = controls.style_text if controls.style_text is not None else ep.style
        if style:
            lines.append(f"[style] {style}")
    text = "\n".join(lines)
    if controls.gender_tokens:
        text = f"{text} {controls.gender_tokens}" if text else controls.gender_tokens
    return text


@dataclass
class Batch:
    input_ids: np.ndarray        # [B, S] int64, right-padded
    input_mask: np.ndarray       # [B, S] bool, True at real tokens
    target_ids: np.ndarray       # [B, T] int64, bos ... eos, right-padded
    target_mask: np.ndarray      # [B, T] bool
    segment_ids: np.ndarray      # [B, S] int64, 0 = text
    image_features: list | None = None   # per-example ImageFeatures or None


def make_batch(episodes, vocab: Vocab, max_len: int,
               controls=None, features=None, counters=None) -> Batch:
    """Tokenize, truncate (keeping the most recent context), and pad.

    `controls` may be a single ControlSettings or one per episode;
    `features` is an optional parallel list of ImageFeatures.
    `counters` collects warning counts (key "label_truncated").
    """
    if not episodes:
        raise DataError("make_batch: empty episode list")
    if isinstance(controls, ControlSettings) or controls is None:
        controls = [controls] * len(episodes)
    inputs, targets = [], []
    for ep, ctl in zip(episodes, controls):
        ids = vocab.encode(assemble_context(ep, ctl))
        if len(ids) > max_len:
            ids = ids[-max_len:]
        label_ids = vocab.encode(ep.label)
        if len(label_ids) > max_len - 2:
            label_ids = label_ids[:max_len - 2]
            if counters is not None:
                counters["label_truncated"] = counters.get("label_truncated", 0) + 1
        inputs.append(ids)
        targets.append([vocab.bos_id] + label_ids + [vocab.eos_id])
    S = max(len(x) for x in inputs)
    T = max(len(x) for x in targets)
    B = len(episodes)
    input_ids = np.full((B, S), vocab.pad_id, dtype=np.int64)
    target_ids = np.full((B, T), vocab.pad_id, dtype=np.int64)
    input_mask = np.zeros((B, S), dtype=bool)
    target_mask = np.zeros((B, T), dtype=bool)
    for i, (x, y) in enumerate(zip(inputs, targets)):
        input_ids[i, :len(x)] = x
        input_mask[i, :len(x)] = True
        target_ids[i, :len(y)] = y
        target_mask[i, :len(y)] = True
    return Batch(input_ids, input_mask, target_ids, target_mask,
                 segment_ids=np.zeros((B, S), dtype=np.int64),
                 image_features=list(features) if features is not None else None)


def multitask_sampler(datasets, seed: int):
    """Infinite episode stream mixing datasets proportionally to weight.

    `datasets` is a list of (role_name, episodes, weight). Each draw picks
    a dataset with probability weight / sum(weights), then a uniform
    episode from it.
    """
    datasets = list(datasets)
    if not datasets:
        raise DataError("multitask_sampler: no datasets")
    for name, eps, w in datasets:
        if w <= 0:
            raise DataError(f"dataset {name!r} has non-positive weight")
        if not eps:
            raise DataError(f"dataset {name!r} is empty but has weight {w}")
    weights = np.array([w for _, _, w in datasets], dtype=np.float64)
    probs = weights / weights.sum()
    rng = np.random.default_rng(seed)

    def stream():
        while True:
            di = int(rng.choice(len(datasets), p=probs))
            eps = datasets[di][1]
            yield eps[int(rng.integers(len(eps)))]

    return stream()
