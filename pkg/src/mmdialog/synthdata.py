"""Synthetic fixture corpora in the episode JSONL schema.

Real dialogue datasets are not redistributed; these tiny generators give
every subsystem something realistic to train and verify on. All
generators are seeded and deterministic.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .data import Episode

CLASS_WORDS = ("ball", "tree", "river", "house", "train", "cloud",
               "horse", "stone")

_GENDERED_MALE = ("he is a good man", "his brother went home",
                  "the boy saw him there")
_GENDERED_FEMALE = ("she is a kind woman", "her sister went home",
                    "the girl saw her there")
_NEUTRAL = ("the tree is very tall", "that road looks long",
            "a warm meal sounds nice")

_TOXIC = ("you are a stupid idiot", "what a pathetic loser",
          "that is disgusting trash")
_CLEAN = ("what a lovely day outside", "that sounds truly wonderful",
          "i am glad to hear it")


def image_class(image_id: str, n_classes: int) -> int:
    digest = hashlib.sha256(image_id.encode()).digest()
    return int.from_bytes(digest[:4], "little") % n_classes


def make_caption_episodes(n: int, n_classes: int = 8, seed: int = 0,
                          role: str = "coco") -> list[Episode]:
    """Caption-style episodes whose label is determined by the image alone.

    The textual context is identical across examples, so only a model that
    reads the image features can predict the class word.
    """
    episodes = []
    for i in range(n):
        iid = f"img{seed:02d}_{i:04d}"
        word = CLASS_WORDS[image_class(iid, n_classes)]
        episodes.append(Episode(
            dataset_role=role,
            context_turns=["what is in the picture ?"],
            image_ref=iid,
            label=f"the photo shows a {word}"))
    return episodes


def make_copy_episodes(n: int, seed: int = 0,
                       role: str = "convai2") -> list[Episode]:
    """Echo task: the label repeats the last context turn."""
    rng = np.random.default_rng(seed)
    words = ("red", "blue", "green", "small", "big", "old", "new", "round")
    episodes = []
    for _ in range(n):
        text = " ".join(rng.choice(words, size=3))
        episodes.append(Episode(dataset_role=role, context_turns=[text],
                                label=text))
    return episodes


def make_dialogue_episodes(n: int, seed: int = 0,
                           role: str = "convai2") -> list[Episode]:
    rng = np.random.default_rng(seed)
    openers = ("hi there !", "hello , how are you ?", "good morning !")
    replies = ("i am doing well thanks", "pretty good , and you ?",
               "great , thanks for asking")
    personas = ("i like dogs", "i play guitar", "i live near the sea")
    episodes = []
    for _ in range(n):
        episodes.append(Episode(
            dataset_role=role,
            persona_lines=[str(rng.choice(personas))],
            context_turns=[str(rng.choice(openers))],
            label=str(rng.choice(replies))))
    return episodes


def make_gender_episodes(n: int, seed: int = 0) -> list[Episode]:
    """Labels alternate between male-worded, female-worded, and neutral.

    With degender controls on, the control token appended to the context
    is perfectly predictive of whether the label is gendered.
    """
    rng = np.random.default_rng(seed)
    episodes = []
    for i in range(n):
        kind = i % 3
        pool = (_NEUTRAL, _GENDERED_FEMALE, _GENDERED_MALE)[kind]
        episodes.append(Episode(
            dataset_role="convai2",
            context_turns=["tell me about them"],
            label=str(rng.choice(pool))))
    return episodes


def make_style_episodes(n: int, seed: int = 0) -> list[Episode]:
    """Image-chat episodes where label polarity follows the style."""
    rng = np.random.default_rng(seed)
    episodes = []
    for i in range(n):
        negative = i % 2 == 0
        style = "Cruel" if negative else "Cheerful"
        pool = _TOXIC if negative else _CLEAN
        episodes.append(Episode(
            dataset_role="image_chat",
            context_turns=["look at this picture"],
            image_ref=f"img_style_{i:04d}",
            style=style,
            label=str(rng.choice(pool))))
    return episodes


def training_corpus(episodes) -> list[str]:
    """Text lines for tokenizer training: contexts plus labels."""
    lines = []
    for ep in episodes:
        lines.extend(ep.persona_lines)
        lines.extend(ep.context_turns)
        if ep.knowledge:
            lines.append(ep.knowledge)
        if ep.style:
            lines.append(f"[style] {ep.style}")
        lines.append(ep.label)
    lines.append("positive/neutral negative f0 f1 m0 m1 [style]")
    return lines
