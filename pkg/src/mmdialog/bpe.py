"""Byte-level BPE tokenizer: training, encoding, exact-roundtrip decoding.

The base alphabet is all 256 byte values, so any UTF-8 string encodes and
decodes back to itself exactly. Reserved tokens (padding, sequence markers,
segment markers, control tokens) occupy the lowest ids and are never
produced by merges.
"""

from __future__ import annotations

from collections import Counter

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
SEG_TEXT, SEG_IMAGE = "<seg:text>", "<seg:image>"
STYLE_MARK = "<style>"
GENDER_TOKENS = ("f0", "f1", "m0", "m1")
BUCKET_TOKENS = ("<bucket:positive/neutral>", "<bucket:negative>")

RESERVED_TOKENS = (PAD, BOS, EOS, UNK, SEG_TEXT, SEG_IMAGE, STYLE_MARK,
                   *GENDER_TOKENS, *BUCKET_TOKENS)


class TokenizerError(ValueError):
    pass


class Vocab:
    """Learned merges plus the fixed reserved/byte base vocabulary."""

    def __init__(self, merges: list[tuple[str, str]]):
        self.merges = list(merges)
        self.token_to_id: dict[str, int] = {}
        for tok in RESERVED_TOKENS:
            self.token_to_id[tok] = len(self.token_to_id)
        self._byte_offset = len(self.token_to_id)
        for b in range(256):
            self.token_to_id[_byte_token(b)] = len(self.token_to_id)
        for a, b in self.merges:
            merged = a + b
            if merged not in self.token_to_id:
                self.token_to_id[merged] = len(self.token_to_id)
        self.id_to_token = {i: t for t, i in self.token_to_id.items()}
        self.pad_id = self.token_to_id[PAD]
        self.bos_id = self.token_to_id[BOS]
        self.eos_id = self.token_to_id[EOS]
        self.unk_id = self.token_to_id[UNK]
        self._rank = {pair: i for i, pair in enumerate(self.merges)}

    def __len__(self):
        return len(self.token_to_id)

    def encode(self, text: str) -> list[int]:
        toks = [_byte_token(b) for b in text.encode("utf-8")]
        while len(toks) > 1:
            best, best_rank = None, None
            for pair in zip(toks, toks[1:]):
                r = self._rank.get(pair)
                if r is not None and (best_rank is None or r < best_rank):
                    best, best_rank = pair, r
            if best is None:
                break
            toks = _merge_once(toks, best)
        return [self.token_to_id[t] for t in toks]

    def decode(self, ids) -> str:
        raw = bytearray()
        for i in ids:
            tok = self.id_to_token.get(int(i))
            if tok is None or tok in RESERVED_TOKENS:
                continue
            raw.extend(_token_bytes(tok))
        return raw.decode("utf-8", errors="replace")


    def to_dict(self) -> dict:
        return {"merges": [list(p) for p in self.merges]}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocab":
        return cls([tuple(p) for p in d["merges"]])


def _byte_token(b: int) -> str:
    return f"<0x{b:02x}>"


def _token_bytes(tok: str) -> bytes:
    out = bytearray()
    i = 0
    while i < len(tok):
        # learned tokens are concatenations of byte tokens
        assert tok[i] == "<"
        out.append(int(tok[i + 3:i + 5], 16))
        i += 6
    return bytes(out)


def _merge_once(toks: list[str], pair: tuple[str, str]) -> list[str]:
    out, i = [], 0
    while i < len(toks):
        if i + 1 < len(toks) and (toks[i], toks[i + 1]) == pair:
            out.append(toks[i] + toks[i + 1])
            i += 2
        else:
            out.append(toks[i])
            i += 1
    return out


def bpe_train(corpus, vocab_size: int) -> Vocab:
    """Learn merges from text lines until the vocabulary reaches vocab_size.

    Deterministic: the most frequent adjacent pair wins each round, ties
    broken by lexicographic pair order.
    """
    corpus = list(corpus)
    if not corpus or all(not line for line in corpus):
        raise TokenizerError("bpe_train: empty corpus")
    base = 256 + len(RESERVED_TOKENS)
    if vocab_size <= base:
        raise TokenizerError(
            f"vocab_size must exceed base vocabulary size {base}")
    words = [[_byte_token(b) for b in line.encode("utf-8")] for line in corpus]
    merges: list[tuple[str, str]] = []
    while base + len(merges) < vocab_size:
        counts: Counter = Counter()
        for w in words:
            counts.update(zip(w, w[1:]))
        if not counts:
            break
        best = min(counts, key=lambda p: (-counts[p], p))
        merges.append(best)
        words = [_merge_once(w, best) for w in words]
    return Vocab(merges)
