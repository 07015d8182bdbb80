"""Style registry, gender lexicon, blocklist, classifier, and reports."""

import numpy as np
import pytest

from mmdialog.safety import (GenderLexicon, OffensiveClassifier, SafetyError,
                             StyleRegistry, audit_utterance, blocklist_match,
                             bucket_replace, classify_gender,
                             format_gender_tsv, format_toxicity_tsv,
                             gender_report, load_blocklist,
                             toxicity_report, train_offensive_classifier)

LEX = GenderLexicon.load_default()
REG = StyleRegistry.load_default()


class TestStyleRegistry:
    def test_default_count(self):
        assert len(REG) == StyleRegistry.EXPECTED_COUNT == 215

    def test_all_buckets_populated(self):
        for bucket in ("positive", "neutral", "negative"):
            assert len(REG.styles(bucket)) > 0

    def test_known_assignments(self):
        assert REG.bucket("Happy") == "positive"
        assert REG.bucket("Cheerful") == "positive"
        assert REG.bucket("Cruel") == "negative"

    def test_unknown_style(self):
        with pytest.raises(SafetyError):
            REG.bucket("NotAStyle")

    def test_wrong_count_rejected(self):
        with pytest.raises(SafetyError):
            StyleRegistry({"Happy": "positive"})

    def test_bad_bucket_rejected(self):
        entries = {f"S{i}": "positive" for i in range(214)}
        entries["Odd"] = "purple"
        with pytest.raises(SafetyError):
            StyleRegistry(entries)


class TestBucketReplace:
    def test_forced_replacement(self):
        rng = np.random.default_rng(0)
        assert bucket_replace("Happy", REG, rng, p_replace=1.0) == \
            "positive/neutral"
        assert bucket_replace("Cruel", REG, rng, p_replace=1.0) == "negative"

    def test_never_replaced(self):
        rng = np.random.default_rng(0)
        assert bucket_replace("Happy", REG, rng, p_replace=0.0) == "Happy"

    def test_empirical_rate(self):
        rng = np.random.default_rng(1)
        n = 10_000
        replaced = sum(bucket_replace("Happy", REG, rng) != "Happy"
                       for _ in range(n))
        assert 0.73 <= replaced / n <= 0.77

    def test_polarity_never_crossed(self):
        rng = np.random.default_rng(2)
        for style in REG.styles():
            out = bucket_replace(style, REG, rng, p_replace=1.0)
            if REG.bucket(style) == "negative":
                assert out == "negative"
            else:
                assert out == "positive/neutral"


class TestClassifyGender:
    def test_male_only(self):
        assert classify_gender("he went home", LEX) == ((False, True), "f0 m1")

    def test_both(self):
        assert classify_gender("she told him", LEX) == ((True, True), "f1 m1")

    def test_neither(self):
        assert classify_gender("the tree fell", LEX) == \
            ((False, False), "f0 m0")

    def test_case_and_boundary(self):
        # "Shell" contains "she" as a substring but not as a word
        assert classify_gender("SHELL shell", LEX)[0] == (False, False)
        assert classify_gender("SHE said", LEX)[0] == (True, False)

    def test_randomized_vs_naive_scan(self):
        rng = np.random.default_rng(3)
        pool = (sorted(LEX.female)[:5] + sorted(LEX.male)[:5]
                + ["tree", "rock", "cloud", "idea", "shelf"])
        for _ in range(200):
            words = [pool[i] for i in rng.integers(0, len(pool),
                                                   rng.integers(1, 8))]
            text = " ".join(words)
            naive_f = any(w in LEX.female for w in words)
            naive_m = any(w in LEX.male for w in words)
            assert classify_gender(text, LEX)[0] == (naive_f, naive_m)


class TestBlocklist:
    def test_empty_blocklist(self):
        assert blocklist_match("anything at all", []) == []

    def test_verbatim_phrase(self):
        assert blocklist_match("you utter dingbat", ["utter dingbat"]) == \
            ["utter dingbat"]

    def test_substring_not_matched(self):
        assert blocklist_match("the doltish scheme", ["dolt"]) == []

    def test_case_insensitive(self):
        assert blocklist_match("What a DOLT", ["dolt"]) == ["dolt"]

    def test_default_asset_loads(self):
        bl = load_blocklist()
        assert len(bl) > 0
        assert all(p == p.lower() for p in bl)


class TestClassifier:
    OFFENSIVE = ["you are a total dingbat", "what a vile dolt you are",
                 "utterly wretched nonsense person", "you miserable dingbat",
                 "a vile and wretched reply", "total dolt move there"]
    CLEAN = ["what a lovely morning", "the garden looks wonderful",
             "thanks for the kind note", "lovely weather this morning",
             "the soup tastes wonderful", "kind words help a lot"]

    def _fit(self):
        texts = self.OFFENSIVE + self.CLEAN
        labels = [1] * len(self.OFFENSIVE) + [0] * len(self.CLEAN)
        return train_offensive_classifier(texts, labels)

    def test_separable_accuracy(self):
        clf = self._fit()
        held_off = ["you vile dingbat person", "wretched dolt nonsense"]
        held_clean = ["wonderful kind garden", "lovely morning soup"]
        correct = sum(clf.is_offensive(t) for t in held_off)
        correct += sum(not clf.is_offensive(t) for t in held_clean)
        assert correct >= 4 * 0.95

    def test_score_range(self):
        clf = self._fit()
        for t in ["", "unseen words entirely", "you dingbat"]:
            assert 0.0 <= clf.score(t) <= 1.0

    def test_deterministic(self):
        a, b = self._fit(), self._fit()
        assert np.array_equal(a.weights, b.weights) and a.bias == b.bias

    def test_single_class_rejected(self):
        with pytest.raises(SafetyError):
            train_offensive_classifier(["a", "b"], [1, 1])


class TestVerdictsAndReports:
    def test_blocklist_iff_hits(self):
        v = audit_utterance("you dolt", ["dolt"], LEX)
        assert v.offensive_by_blocklist and v.blocklist_hits == ["dolt"]
        v2 = audit_utterance("hello there", ["dolt"], LEX)
        assert not v2.offensive_by_blocklist and v2.blocklist_hits == []

    def test_verdict_gender_flags(self):
        v = audit_utterance("she arrived", [], LEX)
        assert v.to_dict()["gender_flags"] == {"female": True, "male": False}

    def test_toxicity_ratio(self):
        eps = list(range(8))
        rows = toxicity_report(
            generate_fn=lambda ep, cond: "bad" if ep < 2 else "fine",
            episodes=eps,
            detector_fn=lambda t: t == "bad",
            detector_name="stub", conditionings=["Cruel"])
        assert rows[0].offensive == 2 and rows[0].total == 8
        assert rows[0].percent == 25.00

    def test_always_false_detector(self):
        rows = toxicity_report(lambda e, c: "x", list(range(5)),
                               lambda t: False, "stub", ["A", "B"])
        assert all(r.percent == 0.0 for r in rows)

    def test_empty_episodes_rejected(self):
        with pytest.raises(SafetyError):
            toxicity_report(lambda e, c: "x", [], lambda t: False, "d", ["A"])

    def test_toxicity_tsv_recomputable(self):
        rows = toxicity_report(lambda e, c: "bad" if e % 3 == 0 else "ok",
                               list(range(9)), lambda t: t == "bad",
                               "stub", ["Cruel", "Cheerful"])
        text = format_toxicity_tsv(rows)
        for line in text.strip().splitlines()[1:]:
            _, _, off, tot, pct = line.split("\t")
            assert int(off) <= int(tot)
            assert float(pct) == round(100.0 * int(off) / int(tot), 2)

    def test_gender_report_counts(self):
        outs = {"f0 m0": "the tree fell", "f1 m1": "she told him"}
        rows = gender_report(lambda e, c: outs[c], list(range(4)), LEX,
                             ["f0 m0", "f1 m1"])
        by_cond = {r.conditioning: r for r in rows}
        assert by_cond["f0 m0"].with_female == 0
        assert by_cond["f1 m1"].with_female == 4
        assert by_cond["f1 m1"].with_male == 4
        text = format_gender_tsv(rows)
        assert "f1 m1\t4\t4\t100.00\t4\t100.00" in text


class TestGenderLexicon:
    def test_default_nonempty_disjoint(self):
        assert LEX.female and LEX.male
        assert not (LEX.female & LEX.male)

    def test_overlap_rejected(self):
        with pytest.raises(SafetyError):
            GenderLexicon(frozenset({"x"}), frozenset({"x", "y"}))

    def test_empty_rejected(self):
        with pytest.raises(SafetyError):
            GenderLexicon(frozenset(), frozenset({"y"}))
