"""Style conditioning, gendered-word controls, and toxicity auditing.

The style registry (215 styles in three polarity buckets), the gender
lexicon, and the blocklist ship as versioned plain-text assets; the real
third-party lists they stand in for are deliberately not redistributed.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

ASSET_PKG = "mmdialog.assets"


class SafetyError(ValueError):
    pass


def _read_asset(name: str) -> str:
    return resources.files(ASSET_PKG).joinpath(name).read_text("utf-8")


def asset_hash(name: str) -> str:
    return hashlib.sha256(_read_asset(name).encode()).hexdigest()


# ---- style registry ----

BUCKETS = ("positive", "neutral", "negative")
POSITIVE_NEUTRAL = "positive/neutral"
NEGATIVE = "negative"


class StyleRegistry:
    """Maps each of the 215 styles to its polarity bucket."""

    EXPECTED_COUNT = 215

    def __init__(self, entries: dict[str, str]):
        for style, bucket in entries.items():
            if bucket not in BUCKETS:
                raise SafetyError(f"style {style!r} has bad bucket {bucket!r}")
        if len(entries) != self.EXPECTED_COUNT:
            raise SafetyError(
                f"style registry must have {self.EXPECTED_COUNT} entries, "
                f"got {len(entries)}")
        self._entries = dict(entries)

    @classmethod
    def load_default(cls) -> "StyleRegistry":
        return cls.parse(_read_asset("styles.tsv"))

    @classmethod
    def parse(cls, text: str) -> "StyleRegistry":
        entries = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            style, bucket = line.split("\t")
            entries[style] = bucket
        return cls(entries)

    def bucket(self, style: str) -> str:
        if style not in self._entries:
            raise SafetyError(f"unknown style {style!r}")
        return self._entries[style]

    def styles(self, bucket: str | None = None) -> list[str]:
        return sorted(s for s, b in self._entries.items()
                      if bucket is None or b == bucket)

    def __len__(self):
        return len(self._entries)


def bucket_replace(style: str, registry: StyleRegistry, rng,
                   p_replace: float = 0.75) -> str:
    """Swap a concrete style for its polarity bucket string with
    probability p_replace."""
    bucket = registry.bucket(style)
    if rng.random() < p_replace:
        return POSITIVE_NEUTRAL if bucket in ("positive", "neutral") else NEGATIVE
    return style


# ---- gendered words ----

@dataclass
class GenderLexicon:
    female: frozenset
    male: frozenset

    def __post_init__(self):
        if not self.female or not self.male:
            raise SafetyError("gender lexicon sets must be non-empty")
        if self.female & self.male:
            raise SafetyError("gender word sets must be disjoint")

    @classmethod
    def load_default(cls) -> "GenderLexicon":
        return cls(
            female=frozenset(_read_asset("gender_female.txt").split()),
            male=frozenset(_read_asset("gender_male.txt").split()))


_WORD_RE = re.compile(r"[a-z0-9']+")


def classify_gender(text: str, lex: GenderLexicon):
    """Word-boundary, case-insensitive presence flags and control string.

    Returns ((female_present, male_present), "f{0|1} m{0|1}").
    """
    words = set(_WORD_RE.findall(text.lower()))
    f = bool(words & lex.female)
    m = bool(words & lex.male)
    return (f, m), f"f{int(f)} m{int(m)}"


# ---- blocklist ----

def load_blocklist(path=None) -> list[str]:
    text = open(path, encoding="utf-8").read() if path else _read_asset("blocklist.txt")
    return [ln.strip().lower() for ln in text.splitlines() if ln.strip()]


def blocklist_match(text: str, blocklist) -> list[str]:
    """All blocklist phrases present with word boundaries, case-insensitive."""
    hits = []
    low = text.lower()
    for phrase in blocklist:
        if re.search(r"(?<![a-z0-9])" + re.escape(phrase) + r"(?![a-z0-9])", low):
            hits.append(phrase)
    return hits


# ---- offensive-language classifier ----

class OffensiveClassifier:
    """Bag-of-ngram logistic regression, trained deterministically.

    A stand-in with the same detector interface as the blocklist: score in
    [0, 1], offensive when score >= threshold.
    """

    def __init__(self, vocab, weights, bias, threshold=0.5, ngram=2):
        self.vocab = vocab            # feature -> column index
        self.weights = weights
        self.bias = bias
        self.threshold = threshold
        self.ngram = ngram

    def _features(self, text: str) -> np.ndarray:
        words = _WORD_RE.findall(text.lower())
        x = np.zeros(len(self.vocab))
        for n in range(1, self.ngram + 1):
            for i in range(len(words) - n + 1):
                j = self.vocab.get(" ".join(words[i:i + n]))
                if j is not None:
                    x[j] += 1.0
        return x

    def score(self, text: str) -> float:
        z = float(self._features(text) @ self.weights + self.bias)
        return float(1.0 / (1.0 + np.exp(-z)))

    def is_offensive(self, text: str) -> bool:
        return self.score(text) >= self.threshold


def train_offensive_classifier(texts, labels, ngram=2, epochs=200,
                               lr=0.5, threshold=0.5) -> OffensiveClassifier:
    """Fit the stand-in detector by full-batch gradient descent."""
    labels = np.asarray(labels, dtype=np.float64)
    if len(set(labels.tolist())) < 2:
        raise SafetyError("classifier training needs both classes")
    vocab: dict[str, int] = {}
    docs = []
    for t in texts:
        words = _WORD_RE.findall(t.lower())
        feats = []
        for n in range(1, ngram + 1):
            for i in range(len(words) - n + 1):
                g = " ".join(words[i:i + n])
                if g not in vocab:
                    vocab[g] = len(vocab)
                feats.append(g)
        docs.append(feats)
    X = np.zeros((len(docs), len(vocab)))
    for r, feats in enumerate(docs):
        for g in feats:
            X[r, vocab[g]] += 1.0
    w = np.zeros(len(vocab))
    b = 0.0
    for _ in range(epochs):
        p = 1.0 / (1.0 + np.exp(-(X @ w + b)))
        g = p - labels
        w -= lr * (X.T @ g) / len(docs)
        b -= lr * float(g.mean())
    return OffensiveClassifier(vocab, w, b, threshold, ngram)


# ---- verdicts and reports ----

@dataclass
class SafetyVerdict:
    blocklist_hits: list[str]
    classifier_score: float
    offensive_by_blocklist: bool
    offensive_by_classifier: bool
    gender_flags: tuple

    def to_dict(self):
        return {
            "blocklist_hits": self.blocklist_hits,
            "classifier_score": round(self.classifier_score, 6),
            "offensive_by_blocklist": self.offensive_by_blocklist,
            "offensive_by_classifier": self.offensive_by_classifier,
            "gender_flags": {"female": self.gender_flags[0],
                             "male": self.gender_flags[1]},
        }


def audit_utterance(text: str, blocklist, lex: GenderLexicon,
                    classifier: OffensiveClassifier | None = None) -> SafetyVerdict:
    hits = blocklist_match(text, blocklist)
    score = classifier.score(text) if classifier else 0.0
    flags, _ = classify_gender(text, lex)
    return SafetyVerdict(
        blocklist_hits=hits,
        classifier_score=score,
        offensive_by_blocklist=bool(hits),
        offensive_by_classifier=bool(classifier and classifier.is_offensive(text)),
        gender_flags=flags)


@dataclass
class ToxicityRow:
    conditioning: str
    detector: str
    offensive: int
    total: int

    @property
    def percent(self) -> float:
        return round(100.0 * self.offensive / self.total, 2)


def toxicity_report(generate_fn, episodes, detector_fn, detector_name,
                    conditionings) -> list[ToxicityRow]:
    """Generate one response per episode under each fixed conditioning and
    report the offensive ratio as a percentage.

    `generate_fn(episode, conditioning) -> text`;
    `detector_fn(text) -> bool`.
    """
    if not episodes:
        raise SafetyError("toxicity_report: empty episode set")
    rows = []
    for cond in conditionings:
        offensive = 0
        for ep in episodes:
            if detector_fn(generate_fn(ep, cond)):
                offensive += 1
        rows.append(ToxicityRow(cond, detector_name, offensive, len(episodes)))
    return rows


def format_toxicity_tsv(rows) -> str:
    lines = ["conditioning\tdetector\toffensive\ttotal\tpercent"]
    for r in rows:
        lines.append(f"{r.conditioning}\t{r.detector}\t{r.offensive}\t"
                     f"{r.total}\t{r.percent:.2f}")
    return "\n".join(lines) + "\n"


@dataclass
class GenderReportRow:
    conditioning: str
    total: int
    with_female: int = 0
    with_male: int = 0

    def to_tsv(self) -> str:
        pf = 100.0 * self.with_female / self.total if self.total else 0.0
        pm = 100.0 * self.with_male / self.total if self.total else 0.0
        return (f"{self.conditioning}\t{self.total}\t{self.with_female}\t"
                f"{pf:.2f}\t{self.with_male}\t{pm:.2f}")


def gender_report(generate_fn, episodes, lex: GenderLexicon,
                  conditionings) -> list[GenderReportRow]:
    """Count generated utterances containing gendered words, per control
    string; counts are reported alongside percentages."""
    if not episodes:
        raise SafetyError("gender_report: empty episode set")
    rows = []
    for cond in conditionings:
        row = GenderReportRow(cond, total=len(episodes))
        for ep in episodes:
            (f, m), _ = classify_gender(generate_fn(ep, cond), lex)
            row.with_female += int(f)
            row.with_male += int(m)
        rows.append(row)
    return rows


def format_gender_tsv(rows) -> str:
    lines = ["conditioning\ttotal\twith_female\tpct_female\twith_male\tpct_male"]
    lines.extend(r.to_tsv() for r in rows)
    return "\n".join(lines) + "\n"
