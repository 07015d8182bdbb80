"""Command-line surface tying the pipeline together.

Subcommands: synth-data, adapt-pretrain, train, eval, generate,
safety-report, degender-report, serve. Each reads an optional JSON config
file; every setting is overridable by a flag.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .bpe import bpe_train
from .checkpoint import load_checkpoint, save_checkpoint
from .data import ControlSettings, load_episodes, save_episodes
from .decoding import BeamConfig
from .imagefeat import FeatureStore, synth_features, write_store
from .inference import ModelBundle, generate_reply
from .metrics import bleu4, f1, format_report_tsv, perplexity, rouge_l
from .model import ModelConfig, desk_config, init_params
from .safety import (GenderLexicon, StyleRegistry, audit_utterance,
                     format_gender_tsv, format_toxicity_tsv, gender_report,
                     load_blocklist, toxicity_report)
from .synthdata import (make_caption_episodes, make_dialogue_episodes,
                        make_gender_episodes, make_style_episodes,
                        training_corpus)
from .training import TrainConfig, episode_controls, train


def _load_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _merge(config_file_section: dict, args, keys) -> dict:
    out = dict(config_file_section)
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            out[k] = v
    return out


def _bundle_from_checkpoint(path, beam: BeamConfig | None = None,
                            feature_store=None, feature_seed=0):
    params, config, vocab, provenance = load_checkpoint(path)
    if feature_store is not None:
        store = FeatureStore(feature_store)
        feature_fn = store.load
    else:
        feature_fn = lambda iid: synth_features(iid, config.feature_kind,
                                                feature_seed)
    return ModelBundle(params=params, config=config, vocab=vocab,
                       beam=beam or BeamConfig(), feature_fn=feature_fn), provenance


def cmd_synth_data(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    caps = make_caption_episodes(args.n, seed=args.seed)
    dial = make_dialogue_episodes(args.n, seed=args.seed)
    gend = make_gender_episodes(args.n, seed=args.seed)
    styl = make_style_episodes(args.n, seed=args.seed)
    save_episodes(caps, out / "captions.jsonl")
    save_episodes(dial, out / "dialogue.jsonl")
    save_episodes(gend, out / "gender.jsonl")
    save_episodes(styl, out / "style.jsonl")
    image_ids = sorted({ep.image_ref for ep in caps + styl if ep.image_ref})
    feats = [synth_features(i, args.feature_kind, args.seed) for i in image_ids]
    write_store(out / "features.bin", feats, args.feature_kind)
    print(f"wrote {4 * args.n} episodes and {len(feats)} feature entries "
          f"to {out}")


def _run_training(args, stage):
    cfg = _load_json(args.config) if args.config else {}
    model_cfg = ModelConfig.from_dict({**desk_config().to_dict(),
                                       **cfg.get("model", {})})
    tdict = _merge(cfg.get("train", {}), args,
                   ["lr", "max_steps", "batch_size", "eval_interval",
                    "patience", "seed", "warmup_steps"])
    tdict["stage"] = stage
    tcfg = TrainConfig(**tdict)

    datasets = []
    all_eps = []
    for spec in cfg.get("datasets", []):
        eps = load_episodes(spec["path"])
        datasets.append((spec["role"], eps, spec.get("weight", len(eps))))
        all_eps.extend(eps)
    if not datasets:
        sys.exit("no datasets configured")
    val_eps = load_episodes(cfg["val"]) if cfg.get("val") else []

    if cfg.get("vocab_from"):
        _, _, vocab, _ = load_checkpoint(cfg["vocab_from"])
    else:
        vocab = bpe_train(training_corpus(all_eps + val_eps),
                          cfg.get("vocab_size", 400))
    model_cfg = ModelConfig.from_dict({**model_cfg.to_dict(),
                                       "vocab_size": len(vocab),
                                       "pad_id": vocab.pad_id})
    if cfg.get("init_checkpoint"):
        params, model_cfg, vocab, prov = load_checkpoint(cfg["init_checkpoint"])
        provenance = list(prov)
    else:
        params = init_params(model_cfg, seed=tcfg.seed)
        provenance = []

    log_file = open(args.log, "w") if args.log else None
    result = train(params, model_cfg, vocab, datasets, val_eps, tcfg,
                   log_file=log_file)
    if log_file:
        log_file.close()
    from .checkpoint import params_hash
    provenance.append({"stage": stage, "seed": tcfg.seed, "lr": tcfg.lr,
                       "steps": len(result.log),
                       "params_hash": params_hash(result.params)})
    save_checkpoint(args.out, result.params, model_cfg, vocab,
                    provenance=provenance)
    status = "diverged" if result.diverged else (
        "early-stopped" if result.stopped_early else "completed")
    print(f"{status}; best val ppl {result.best_val_ppl:.4f}; "
          f"checkpoint -> {args.out}")


def cmd_train(args):
    _run_training(args, "finetune")


def cmd_adapt_pretrain(args):
    _run_training(args, "adapt_pretrain")


def cmd_eval(args):
    bundle, _ = _bundle_from_checkpoint(args.checkpoint,
                                        feature_store=args.features)
    episodes = load_episodes(args.episodes)
    feats = None
    if bundle.config.fusion != "none":
        feats = [bundle.feature_fn(ep.image_ref) for ep in episodes]
    ppl = perplexity(bundle.params, bundle.config, bundle.vocab, episodes,
                     features=feats, max_len=bundle.config.max_positions)
    rows = [f"metric\tvalue", f"ppl\t{ppl:.4f}"]
    if args.generate:
        scores = {"f1": [], "bleu4": [], "rouge_l": []}
        for ep in episodes:
            text, _ = generate_reply(bundle, ep)
            scores["f1"].append(f1(text, ep.label))
            scores["bleu4"].append(bleu4(text, ep.label))
            scores["rouge_l"].append(rouge_l(text, ep.label))
        for name, vals in scores.items():
            rows.append(f"{name}\t{float(np.mean(vals)):.4f}")
    report = "\n".join(rows) + "\n"
    if args.out:
        Path(args.out).write_text(report)
    else:
        print(report, end="")


def _beam_from_args(args) -> BeamConfig:
    return BeamConfig(
        beam_size=args.beam_size, min_length=args.min_length,
        max_length=args.max_length,
        block_within_generation=not args.no_gen_block,
        block_from_context=not args.no_context_block)


def cmd_generate(args):
    bundle, _ = _bundle_from_checkpoint(args.checkpoint, _beam_from_args(args),
                                        feature_store=args.features)
    episodes = load_episodes(args.episodes)
    with open(args.out, "w", encoding="utf-8") as fh:
        for ep in episodes:
            text, hyp = generate_reply(bundle, ep)
            fh.write(json.dumps({"context": ep.context_turns,
                                 "prediction": text,
                                 "score": hyp.logp}) + "\n")
    print(f"wrote {len(episodes)} predictions to {args.out}")


def _report_generate_fn(bundle, registry):
    def gen(ep, conditioning):
        if conditioning.startswith("f") and " m" in conditioning:
            controls = ControlSettings(gender_tokens=conditioning)
        else:
            controls = ControlSettings(include_style=True,
                                       style_text=conditioning)
        text, _ = generate_reply(bundle, ep, controls)
        return text
    return gen


def cmd_safety_report(args):
    beam = BeamConfig(beam_size=args.beam_size, min_length=args.min_length,
                      max_length=args.max_length)
    bundle, _ = _bundle_from_checkpoint(args.checkpoint, beam,
                                        feature_store=args.features)
    episodes = load_episodes(args.episodes)
    registry = StyleRegistry.load_default()
    blocklist = load_blocklist(args.blocklist)
    gen = _report_generate_fn(bundle, registry)
    detector = lambda text: bool(audit_utterance(
        text, blocklist, GenderLexicon.load_default()).blocklist_hits)
    rows = toxicity_report(gen, episodes, detector, "blocklist",
                           args.conditioning)
    tsv = format_toxicity_tsv(rows)
    if args.out:
        Path(args.out).write_text(tsv)
    else:
        print(tsv, end="")


def cmd_degender_report(args):
    beam = BeamConfig(beam_size=args.beam_size, min_length=args.min_length,
                      max_length=args.max_length)
    bundle, _ = _bundle_from_checkpoint(args.checkpoint, beam,
                                        feature_store=args.features)
    episodes = load_episodes(args.episodes)
    registry = StyleRegistry.load_default()
    lexicon = GenderLexicon.load_default()
    gen = _report_generate_fn(bundle, registry)
    rows = gender_report(gen, episodes, lexicon, ["f0 m0", "f1 m1"])
    tsv = format_gender_tsv(rows)
    if args.out:
        Path(args.out).write_text(tsv)
    else:
        print(tsv, end="")


def cmd_serve(args):
    from .server import create_app, run_server
    bundle, _ = _bundle_from_checkpoint(args.checkpoint,
                                        feature_store=args.features)
    store = FeatureStore(args.features) if args.features else None
    blocklist = load_blocklist(args.blocklist)
    app = create_app(bundle, store=store, blocklist=blocklist,
                     default_degender=args.degender,
                     default_bucket=args.bucket)
    run_server(app, port=args.port)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mmdialog")
    sub = p.add_subparsers(dest="command", required=True)

    sd = sub.add_parser("synth-data", help="generate fixture datasets")
    sd.add_argument("--out", required=True)
    sd.add_argument("--n", type=int, default=64)
    sd.add_argument("--seed", type=int, default=0)
    sd.add_argument("--feature-kind", default="global")
    sd.set_defaults(fn=cmd_synth_data)

    for name, fn in (("train", cmd_train),
                     ("adapt-pretrain", cmd_adapt_pretrain)):
        t = sub.add_parser(name, help=f"run the {name} stage")
        t.add_argument("--config", help="JSON config file")
        t.add_argument("--out", required=True, help="checkpoint path")
        t.add_argument("--log", help="JSONL training log path")
        for flag, typ in (("lr", float), ("max-steps", int),
                          ("batch-size", int), ("eval-interval", int),
                          ("patience", int), ("seed", int),
                          ("warmup-steps", int)):
            t.add_argument(f"--{flag}", type=typ, dest=flag.replace("-", "_"))
        t.set_defaults(fn=fn)

    ev = sub.add_parser("eval", help="evaluate a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--episodes", required=True)
    ev.add_argument("--features")
    ev.add_argument("--generate", action="store_true",
                    help="also compute generation metrics (slow)")
    ev.add_argument("--out")
    ev.set_defaults(fn=cmd_eval)

    def beam_flags(sp, min_length=20, max_length=64, beam_size=10):
        sp.add_argument("--beam-size", type=int, default=beam_size)
        sp.add_argument("--min-length", type=int, default=min_length)
        sp.add_argument("--max-length", type=int, default=max_length)

    g = sub.add_parser("generate", help="decode predictions for episodes")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--episodes", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--features")
    beam_flags(g)
    g.add_argument("--no-context-block", action="store_true")
    g.add_argument("--no-gen-block", action="store_true")
    g.set_defaults(fn=cmd_generate)

    s = sub.add_parser("safety-report", help="toxicity table")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--episodes", required=True)
    s.add_argument("--features")
    s.add_argument("--blocklist")
    s.add_argument("--conditioning", nargs="+",
                   default=["Cheerful", "Cruel"])
    s.add_argument("--out")
    beam_flags(s, min_length=1, max_length=16, beam_size=3)
    s.set_defaults(fn=cmd_safety_report)

    d = sub.add_parser("degender-report", help="gendered-word table")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--episodes", required=True)
    d.add_argument("--features")
    d.add_argument("--out")
    beam_flags(d, min_length=1, max_length=16, beam_size=3)
    d.set_defaults(fn=cmd_degender_report)

    sv = sub.add_parser("serve", help="run the HTTP chat service")
    sv.add_argument("--checkpoint", required=True)
    sv.add_argument("--features")
    sv.add_argument("--blocklist")
    sv.add_argument("--port", type=int, default=8080)
    sv.add_argument("--degender", action="store_true")
    sv.add_argument("--bucket", default="positive/neutral")
    sv.set_defaults(fn=cmd_serve)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    args.fn(args)


if __name__ == "__main__":
    main()
