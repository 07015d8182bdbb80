"""Training loop behavior, checkpointing, fixtures, and the harness."""

import numpy as np
import pytest

from mmdialog.bpe import bpe_train
from mmdialog.checkpoint import (CheckpointError, load_checkpoint,
                                 params_hash, save_checkpoint, vocab_hash)
from mmdialog.data import Episode
from mmdialog.harness import AblationCell, ablation_harness
from mmdialog.model import ModelConfig, init_params
from mmdialog.synthdata import (CLASS_WORDS, image_class,
                                make_caption_episodes, make_copy_episodes,
                                make_gender_episodes, make_style_episodes,
                                training_corpus)
from mmdialog.training import (TrainConfig, TrainingError, episode_controls,
                               staged_pipeline, train)
from mmdialog.safety import GenderLexicon, StyleRegistry


def tiny_config(vocab_size, **kw):
    base = dict(n_enc_layers=1, n_dec_layers=1, d_model=16, n_heads=2,
                d_ffn=32, vocab_size=vocab_size, max_positions=64)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture(scope="module")
def copy_setup():
    eps = make_copy_episodes(16, seed=0)
    vocab = bpe_train(training_corpus(eps), 300)
    cfg = tiny_config(len(vocab), pad_id=vocab.pad_id)
    return eps, vocab, cfg


def quick_tcfg(**kw):
    base = dict(lr=3e-3, warmup_steps=5, max_steps=40, batch_size=4,
                eval_interval=10, patience=3, seed=0, max_len=32)
    base.update(kw)
    return TrainConfig(**base)


class TestSynthData:
    def test_caption_label_is_image_determined(self):
        eps = make_caption_episodes(20, seed=1)
        for ep in eps:
            word = CLASS_WORDS[image_class(ep.image_ref, 8)]
            assert ep.label.endswith(word)

    def test_generators_deterministic(self):
        for gen in (make_caption_episodes, make_copy_episodes,
                    make_gender_episodes, make_style_episodes):
            a = [e.to_dict() for e in gen(10, seed=3)]
            b = [e.to_dict() for e in gen(10, seed=3)]
            assert a == b

    def test_style_polarity_correlation(self):
        reg = StyleRegistry.load_default()
        for ep in make_style_episodes(12, seed=0):
            assert reg.bucket(ep.style) in ("positive", "negative")

    def test_training_corpus_covers_control_tokens(self):
        text = " ".join(training_corpus(make_copy_episodes(2)))
        for tok in ("f0", "f1", "m0", "m1", "positive/neutral", "[style]"):
            assert tok in text


class TestEpisodeControls:
    def test_gender_tokens_from_label(self):
        lex = GenderLexicon.load_default()
        reg = StyleRegistry.load_default()
        ep = Episode(dataset_role="convai2", context_turns=["x"],
                     label="she went home")
        ctl = episode_controls(ep, quick_tcfg(degender=True), reg, lex,
                               np.random.default_rng(0))
        assert ctl.gender_tokens == "f1 m0"

    def test_style_passthrough_without_replacement(self):
        lex = GenderLexicon.load_default()
        reg = StyleRegistry.load_default()
        ep = Episode(dataset_role="image_chat", context_turns=["x"],
                     image_ref="i", style="Happy", label="y")
        ctl = episode_controls(ep, quick_tcfg(include_style=True), reg, lex,
                               np.random.default_rng(0))
        assert ctl.style_text == "Happy"


class TestTrain:
    def test_loss_decreases_on_copy_task(self, copy_setup):
        eps, vocab, cfg = copy_setup
        params = init_params(cfg, seed=0)
        result = train(params, cfg, vocab, [("copy", eps, 1.0)], [],
                       quick_tcfg(max_steps=80))
        assert not result.diverged
        first = np.mean([e["loss"] for e in result.log[:5]])
        last = np.mean([e["loss"] for e in result.log[-5:]])
        assert last < 0.5 * first

    def test_seeded_determinism(self, copy_setup):
        eps, vocab, cfg = copy_setup
        hashes = []
        for _ in range(2):
            params = init_params(cfg, seed=1)
            train(params, cfg, vocab, [("copy", eps, 1.0)], [],
                  quick_tcfg(max_steps=10))
            hashes.append(params_hash(params))
        assert hashes[0] == hashes[1]

    def test_patience_stops_frozen_run(self, copy_setup):
        eps, vocab, cfg = copy_setup
        params = init_params(cfg, seed=2)
        result = train(params, cfg, vocab, [("copy", eps, 1.0)], eps[:4],
                       quick_tcfg(lr=0.0, max_steps=200, eval_interval=5,
                                  patience=2))
        # lr=0 never improves validation, so patience must fire
        assert result.stopped_early
        assert len(result.log) <= 5 * (1 + 2)

    def test_target_ppl_short_circuits(self, copy_setup):
        eps, vocab, cfg = copy_setup
        params = init_params(cfg, seed=3)
        result = train(params, cfg, vocab, [("copy", eps, 1.0)], eps[:4],
                       quick_tcfg(max_steps=500, eval_interval=10,
                                  target_ppl=1e9))
        assert len(result.log) == 10      # stops at the first validation

    @pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
    def test_divergence_restores_last_good(self, copy_setup):
        eps, vocab, cfg = copy_setup
        params = init_params(cfg, seed=4)
        result = train(params, cfg, vocab, [("copy", eps, 1.0)], [],
                       quick_tcfg(lr=1e9, warmup_steps=0, max_steps=50))
        assert result.diverged
        for p in result.params.values():
            assert np.all(np.isfinite(p.data))

    def test_no_image_strips_features(self):
        eps = make_caption_episodes(8, seed=0)
        vocab = bpe_train(training_corpus(eps), 300)
        cfg = tiny_config(len(vocab), pad_id=vocab.pad_id, fusion="late")
        params = init_params(cfg, seed=5)

        def forbidden(_):
            raise AssertionError("feature_fn called despite no_image")

        result = train(params, cfg, vocab, [("cap", eps, 1.0)], [],
                       quick_tcfg(max_steps=3, no_image=True),
                       feature_fn=forbidden)
        assert not result.diverged

    def test_bad_stage_rejected(self):
        with pytest.raises(TrainingError):
            TrainConfig(stage="pretrain")


class TestCheckpoint:
    def test_roundtrip_bit_identical(self, copy_setup, tmp_path):
        eps, vocab, cfg = copy_setup
        params = init_params(cfg, seed=6)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, params, cfg, vocab,
                        provenance=[{"stage": "finetune", "seed": 6}])
        loaded, cfg2, vocab2, prov = load_checkpoint(path)
        assert cfg2.to_dict() == cfg.to_dict()
        assert vocab_hash(vocab2) == vocab_hash(vocab)
        assert prov == [{"stage": "finetune", "seed": 6}]
        for k in params:
            assert np.array_equal(
                loaded[k].data, params[k].data.astype(np.float32))
        assert params_hash(loaded) == params_hash(params)

    def test_config_mismatch_rejected(self, copy_setup, tmp_path):
        eps, vocab, cfg = copy_setup
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, init_params(cfg, seed=0), cfg, vocab)
        other = tiny_config(cfg.vocab_size, d_model=32, pad_id=cfg.pad_id)
        with pytest.raises(CheckpointError):
            load_checkpoint(path, expected_config=other)

    def test_truncated_blob_rejected(self, copy_setup, tmp_path):
        eps, vocab, cfg = copy_setup
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, init_params(cfg, seed=0), cfg, vocab)
        data = path.read_bytes()
        path.write_bytes(data[:-100])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_header_tamper_rejected(self, copy_setup, tmp_path):
        eps, vocab, cfg = copy_setup
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, init_params(cfg, seed=0), cfg, vocab)
        data = bytearray(path.read_bytes())
        # flip a byte inside the vocab hash hex string
        idx = data.index(b"vocab_hash") + 14
        data[idx] = ord("0") if data[idx] != ord("0") else ord("1")
        path.write_bytes(bytes(data))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)


class TestStagedPipeline:
    def test_two_stages_and_provenance(self, copy_setup, tmp_path):
        eps, vocab, cfg = copy_setup
        path = tmp_path / "staged.ckpt"
        params, prov = staged_pipeline(
            cfg, vocab,
            [("copy", eps, 1.0)], [], quick_tcfg(stage="adapt_pretrain",
                                                 max_steps=5),
            [("copy", eps, 1.0)], [], quick_tcfg(max_steps=5),
            seed=0, checkpoint_path=path)
        assert [p["stage"] for p in prov] == ["adapt_pretrain", "finetune"]
        assert prov[0]["params_hash"] != prov[1]["params_hash"]
        loaded, _, _, prov2 = load_checkpoint(path)
        assert prov2 == prov
        assert params_hash(loaded) == prov[1]["params_hash"]


class TestHarness:
    def test_single_cell_report(self, copy_setup):
        eps, vocab, cfg = copy_setup
        cells = [AblationCell("global", "none", "copy",
                              [("copy", eps, 1.0)], {"copy": eps[:4]})]
        reports = ablation_harness(cells, cfg, vocab,
                                   quick_tcfg(max_steps=3))
        assert len(reports) == 1
        assert reports[0].entries[0].dataset == "copy"
        assert np.isfinite(reports[0].entries[0].ppl)

    @pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
    def test_failed_cell_marked_and_continues(self, copy_setup):
        eps, vocab, cfg = copy_setup
        bad = AblationCell("global", "none", "bad",
                           [("copy", eps, 1.0)], {"copy": eps[:4]})
        good = AblationCell("global", "none", "good",
                            [("copy", eps, 1.0)], {"copy": eps[:4]})
        tcfg = quick_tcfg(max_steps=3)
        diverge = quick_tcfg(lr=1e9, warmup_steps=0, max_steps=10)
        reports = []
        reports += ablation_harness([bad], cfg, vocab, diverge)
        reports += ablation_harness([good], cfg, vocab, tcfg)
        assert reports[0].entries[0].failed
        assert not reports[1].entries[0].failed
