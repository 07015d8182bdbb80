"""Generation metrics (F1, BLEU-4, ROUGE-L) and perplexity.

Text normalization is pinned (lowercase, strip punctuation, collapse
whitespace): metric values are meaningless without a fixed normalizer.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .data import make_batch
from .model import forward_loss

_PUNCT_RE = re.compile(r"[^\w\s]")

BLEU_EPS = 1e-9
ROUGE_BETA = 1.2


def normalize_text(s: str) -> list[str]:
    """Lowercase, strip punctuation, collapse whitespace; returns tokens."""
    return _PUNCT_RE.sub(" ", s.lower()).split()


def f1(hyp: str, ref: str) -> float:
    """Unigram precision/recall harmonic mean with multiset overlap."""
    h, r = normalize_text(hyp), normalize_text(ref)
    if not h or not r:
        return 0.0
    overlap = sum((Counter(h) & Counter(r)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(h)
    recall = overlap / len(r)
    return 2 * precision * recall / (precision + recall)


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu4(hyp: str, ref: str) -> float:
    """Geometric mean of clipped 1-4-gram precisions with brevity penalty.

    Zero counts are floored at BLEU_EPS rather than rescaled.
    """
    h, r = normalize_text(hyp), normalize_text(ref)
    if not h or not r:
        return 0.0
    log_sum = 0.0
    for n in range(1, 5):
        hng = _ngrams(h, n)
        total = sum(hng.values())
        if total == 0:
            clipped = 0
            total = 1
        else:
            clipped = sum((hng & _ngrams(r, n)).values())
        p = clipped / total
        log_sum += 0.25 * math.log(max(p, BLEU_EPS))
    bp = 1.0 if len(h) >= len(r) else math.exp(1.0 - len(r) / len(h))
    return bp * math.exp(log_sum)


def _lcs_len(a, b) -> int:
    dp = [0] * (len(b) + 1)
    for x in a:
        prev = 0
        for j, y in enumerate(b, 1):
            cur = dp[j]
            dp[j] = prev + 1 if x == y else max(dp[j], dp[j - 1])
            prev = cur
    return dp[len(b)]


def rouge_l(hyp: str, ref: str) -> float:
    """LCS-based F-measure with beta = 1.2."""
    h, r = normalize_text(hyp), normalize_text(ref)
    if not h or not r:
        return 0.0
    lcs = _lcs_len(h, r)
    if lcs == 0:
        return 0.0
    prec = lcs / len(h)
    rec = lcs / len(r)
    b2 = ROUGE_BETA ** 2
    return (1 + b2) * prec * rec / (rec + b2 * prec)


def perplexity(params, config, vocab, episodes, controls=None,
               features=None, max_len=64, batch_size=8) -> float:
    """exp(total NLL / total non-pad target tokens), teacher-forced."""
    total_nll, total_tokens = 0.0, 0
    for i in range(0, len(episodes), batch_size):
        chunk = episodes[i:i + batch_size]
        ctl = controls[i:i + batch_size] if isinstance(controls, list) else controls
        fts = features[i:i + batch_size] if features is not None else None
        batch = make_batch(chunk, vocab, max_len, controls=ctl, features=fts)
        loss, n = forward_loss(params, config, batch)
        total_nll += float(loss.data) * n
        total_tokens += n
    if total_tokens == 0:
        raise ValueError("perplexity: no supervised tokens")
    return math.exp(total_nll / total_tokens)


@dataclass
class EvalEntry:
    dataset: str
    ppl: float
    f1: float = 0.0
    bleu4: float = 0.0
    rouge_l: float = 0.0
    tokens: int = 0
    failed: bool = False


@dataclass
class EvalReport:
    """Per-dataset metrics plus grouping keys and recomputable averages."""
    feature_kind: str
    fusion: str
    training_data: str
    entries: list = field(default_factory=list)

    TEXT_DATASETS = ("convai2", "ed", "wow", "bst")

    def entry(self, dataset) -> EvalEntry | None:
        for e in self.entries:
            if e.dataset == dataset:
                return e
        return None

    def average(self, datasets) -> float:
        vals = [e.ppl for e in self.entries
                if e.dataset in datasets and not e.failed]
        return sum(vals) / len(vals) if vals else float("nan")

    @property
    def text_avg(self) -> float:
        return self.average(self.TEXT_DATASETS)

    @property
    def all_avg(self) -> float:
        return self.average([e.dataset for e in self.entries])


def format_report_tsv(reports) -> str:
    lines = ["feature_kind\tfusion\ttraining_data\tdataset\tppl\tf1\t"
             "bleu4\trouge_l\tstatus"]
    for rep in reports:
        for e in rep.entries:
            status = "failed" if e.failed else "ok"
            lines.append(
                f"{rep.feature_kind}\t{rep.fusion}\t{rep.training_data}\t"
                f"{e.dataset}\t{e.ppl:.4f}\t{e.f1:.4f}\t{e.bleu4:.4f}\t"
                f"{e.rouge_l:.4f}\t{status}")
    return "\n".join(lines) + "\n"
