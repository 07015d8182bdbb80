"""Metric values against independent naive oracles, plus perplexity."""

import math

import numpy as np
import pytest

from mmdialog.bpe import RESERVED_TOKENS, bpe_train
from mmdialog.data import Episode
from mmdialog.metrics import (EvalEntry, EvalReport, bleu4, f1,
                              format_report_tsv, normalize_text, perplexity,
                              rouge_l)
from mmdialog.model import ModelConfig, decode_step, encode, init_params

WORDS = ["cat", "dog", "sun", "mat", "hat", "run"]


def random_sentence(rng, max_len=8):
    n = int(rng.integers(1, max_len))
    return " ".join(WORDS[i] for i in rng.integers(0, len(WORDS), n))


# ---- naive oracles, written brute-force on purpose ----

def naive_f1(hyp, ref):
    h, r = normalize_text(hyp), normalize_text(ref)
    if not h or not r:
        return 0.0
    overlap = 0
    pool = list(r)
    for w in h:
        if w in pool:
            pool.remove(w)
            overlap += 1
    if overlap == 0:
        return 0.0
    p, q = overlap / len(h), overlap / len(r)
    return 2 * p * q / (p + q)


def naive_bleu4(hyp, ref, eps=1e-9):
    h, r = normalize_text(hyp), normalize_text(ref)
    if not h or not r:
        return 0.0
    logs = 0.0
    for n in range(1, 5):
        hg = [tuple(h[i:i + n]) for i in range(len(h) - n + 1)]
        rg = [tuple(r[i:i + n]) for i in range(len(r) - n + 1)]
        clipped = 0
        for g in set(hg):
            clipped += min(hg.count(g), rg.count(g))
        p = clipped / len(hg) if hg else 0.0
        logs += 0.25 * math.log(max(p, eps))
    bp = 1.0 if len(h) >= len(r) else math.exp(1.0 - len(r) / len(h))
    return bp * math.exp(logs)


def naive_rouge_l(hyp, ref, beta=1.2):
    h, r = normalize_text(hyp), normalize_text(ref)
    if not h or not r:
        return 0.0
    table = [[0] * (len(r) + 1) for _ in range(len(h) + 1)]
    for i in range(1, len(h) + 1):
        for j in range(1, len(r) + 1):
            if h[i - 1] == r[j - 1]:
                table[i][j] = table[i - 1][j - 1] + 1
            else:
                table[i][j] = max(table[i - 1][j], table[i][j - 1])
    lcs = table[len(h)][len(r)]
    if lcs == 0:
        return 0.0
    p, q = lcs / len(h), lcs / len(r)
    return (1 + beta ** 2) * p * q / (q + beta ** 2 * p)


class TestNormalizer:
    def test_lowercase_punct_whitespace(self):
        assert normalize_text("Hello, World!   foo") == \
            ["hello", "world", "foo"]

    def test_empty(self):
        assert normalize_text("...") == []


class TestF1:
    def test_identical(self):
        assert f1("a b c", "a b c") == 1.0

    def test_disjoint(self):
        assert f1("a b", "c d") == 0.0

    def test_hand_count(self):
        assert abs(f1("a b c", "a b d") - 2 / 3) < 1e-12

    def test_empty_strings(self):
        assert f1("", "x") == 0.0 and f1("x", "") == 0.0

    def test_vs_naive_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(120):
            h, r = random_sentence(rng), random_sentence(rng)
            assert abs(f1(h, r) - naive_f1(h, r)) <= 1e-9


class TestBleu4:
    def test_identical_long(self):
        s = "the cat sat on the mat"
        assert abs(bleu4(s, s) - 1.0) < 1e-12

    def test_no_overlap_near_zero(self):
        # all four precisions hit the smoothing floor
        assert bleu4("a b c d e", "v w x y z") <= 1e-9 ** 0.25 * 1.01

    def test_vs_naive_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(120):
            h, r = random_sentence(rng), random_sentence(rng)
            assert abs(bleu4(h, r) - naive_bleu4(h, r)) <= 1e-9

    def test_range(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            v = bleu4(random_sentence(rng), random_sentence(rng))
            assert 0.0 <= v <= 1.0


class TestRougeL:
    def test_identical(self):
        assert rouge_l("x y z", "x y z") == 1.0

    def test_disjoint(self):
        assert rouge_l("a b", "c d") == 0.0

    def test_vs_naive_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(120):
            h, r = random_sentence(rng), random_sentence(rng)
            assert abs(rouge_l(h, r) - naive_rouge_l(h, r)) <= 1e-9


class StubVocab:
    """Maps characters straight to small ids, for tiny-vocab ppl tests."""

    def __init__(self, pad_id=0, bos_id=1, eos_id=2, base=3):
        self.pad_id, self.bos_id, self.eos_id = pad_id, bos_id, eos_id
        self.base = base

    def encode(self, text):
        return [self.base + (ord(c) % 12) for c in text if c != " "]


def tiny_lm(vocab_size, seed, zero=False):
    cfg = ModelConfig(n_enc_layers=1, n_dec_layers=1, d_model=8, n_heads=2,
                      d_ffn=16, vocab_size=vocab_size, max_positions=32)
    params = init_params(cfg, seed=seed, dtype=np.float64)
    if zero:
        for p in params.values():
            p.data = np.zeros_like(p.data)
    return cfg, params


def episodes(texts):
    return [Episode(dataset_role="convai2", context_turns=[t], label=t)
            for t in texts]


class TestPerplexity:
    def test_uniform_model(self):
        # all-zero parameters give uniform logits over the whole vocabulary
        cfg, params = tiny_lm(16, seed=0, zero=True)
        ppl = perplexity(params, cfg, StubVocab(), episodes(["ab", "cde"]))
        assert abs(ppl - 16.0) <= 1e-3

    def test_matches_per_token_recomputation(self):
        cfg, params = tiny_lm(15, seed=4)
        vocab = StubVocab()
        eps = episodes(["abc", "de"])
        got = perplexity(params, cfg, vocab, eps)
        total, count = 0.0, 0
        for ep in eps:
            ids = vocab.encode(ep.context_turns[0])
            tgt = [vocab.bos_id] + vocab.encode(ep.label) + [vocab.eos_id]
            x = np.array([ids], dtype=np.int64)
            memory, mmask = encode(params, cfg, x, np.ones_like(x, bool))
            for t in range(1, len(tgt)):
                logits = decode_step(params, cfg, memory, mmask,
                                     np.array([tgt[:t]]))[0]
                logz = np.log(np.exp(logits - logits.max()).sum()) \
                    + logits.max()
                total += float(logz - logits[tgt[t]])
                count += 1
        assert abs(got - math.exp(total / count)) <= 1e-5

    def test_zero_tokens_rejected(self):
        cfg, params = tiny_lm(16, seed=0)
        with pytest.raises(ValueError):
            perplexity(params, cfg, StubVocab(), [])


class TestEvalReport:
    def _report(self):
        rep = EvalReport(feature_kind="global", fusion="late",
                         training_data="all")
        rep.entries = [EvalEntry("convai2", ppl=10.0),
                       EvalEntry("wow", ppl=20.0),
                       EvalEntry("image_chat", ppl=30.0),
                       EvalEntry("ed", ppl=40.0, failed=True)]
        return rep

    def test_averages_recomputable(self):
        rep = self._report()
        assert rep.text_avg == 15.0           # failed rows excluded
        assert rep.all_avg == 20.0

    def test_tsv_contains_failure_marker(self):
        text = format_report_tsv([self._report()])
        lines = text.strip().splitlines()
        assert lines[0].startswith("feature_kind")
        assert sum(ln.endswith("failed") for ln in lines) == 1
