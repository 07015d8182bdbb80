"""Beam search with minimum length and tri-gram blocking, plus an
exhaustive enumeration oracle used to verify it.

Both search routines share one constraint function, so the oracle checks
the search strategy, not a second copy of the blocking rules.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import decode_step


class DecodeError(ValueError):
    pass


@dataclass
class BeamConfig:
    beam_size: int = 10
    min_length: int = 20
    max_length: int = 64
    block_ngram: int = 3
    block_within_generation: bool = True
    block_from_context: bool = True

    def __post_init__(self):
        if self.beam_size < 1:
            raise DecodeError("beam_size must be >= 1")
        if self.min_length >= self.max_length:
            raise DecodeError("min_length must be < max_length")


@dataclass
class Hypothesis:
    tokens: tuple              # generated ids, eos included when finished
    logp: float
    finished: bool

    @property
    def surface_tokens(self):
        """Generated tokens with the trailing eos stripped."""
        return self.tokens[:-1] if self.finished else self.tokens


def find_banned_tokens(hypothesis_tokens, context_tokens=None, n: int = 3):
    """Tokens that would complete an n-gram already present.

    Returns the set of t such that (last n-1 hypothesis tokens) + t occurs
    in the hypothesis itself or, when context_tokens is given, in the
    context.
    """
    if n < 1:
        raise DecodeError("n must be >= 1")
    hyp = tuple(hypothesis_tokens)
    if len(hyp) < n - 1:
        return set()
    prefix = hyp[-(n - 1):] if n > 1 else ()
    banned = _completions(hyp, prefix, n)
    if context_tokens:
        banned |= _completions(tuple(context_tokens), prefix, n)
    return banned


def _completions(seq: tuple, prefix: tuple, n: int) -> set:
    """Tokens that follow `prefix` anywhere in `seq` as an n-gram."""
    out = set()
    for i in range(len(seq) - n + 1):
        if seq[i:i + n - 1] == prefix:
            out.add(seq[i + n - 1])
    return out


def _constrained_logprobs(logprobs, gen_tokens, context_tokens, cfg,
                          eos_id, relax=False):
    """Apply min-length and blocking constraints; returns a masked copy.

    With relax=True a fully banned vector is re-masked with the
    constraints dropped in order (context blocking first, then generation
    blocking); otherwise it is returned as-is and the caller treats the
    hypothesis as a dead end.
    """
    n = cfg.block_ngram
    hyp = tuple(gen_tokens)
    prefix = hyp[-(n - 1):] if n > 1 else ()

    def mask(block_gen, block_ctx):
        out = np.array(logprobs, dtype=np.float64, copy=True)
        if len(hyp) < cfg.min_length:
            out[eos_id] = -np.inf
        if len(hyp) >= n - 1:
            banned = set()
            if block_gen:
                banned |= _completions(hyp, prefix, n)
            if block_ctx and context_tokens:
                banned |= _completions(tuple(context_tokens), prefix, n)
            for t in banned:
                out[t] = -np.inf
        return out

    out = mask(cfg.block_within_generation, cfg.block_from_context)
    if relax and np.all(np.isinf(out)):
        out = mask(cfg.block_within_generation, False)
        if np.all(np.isinf(out)):
            out = mask(False, False)
    return out


def beam_search(step_fn, vocab_size, eos_id, context_tokens, cfg: BeamConfig,
                counters=None) -> Hypothesis:
    """Length-extended beam search under the shared constraints.

    `step_fn(generated_tokens) -> log-prob vector [V]` abstracts the model
    so tiny synthetic distributions can drive the same code path. Returns
    the best finished hypothesis by cumulative log-prob (best unfinished
    at max_length if none finished); ties break toward lower token ids.

    A single fixed-width pass is not monotone in beam size: a narrow beam
    can ride a greedy path to a finished hypothesis that a wider beam
    trades away for breadth. To make score(beam_size) non-decreasing we
    run the core pass at every width 1..beam_size and keep the overall
    best; a larger budget then searches a strict superset of passes.
    Model calls are memoized on the generated prefix, which the passes
    share heavily. When the full-width pass never truncates its candidate
    list it is an exhaustive search and already optimal, so the narrower
    passes are skipped.
    """
    counters = counters if counters is not None else {}
    cache: dict[tuple, np.ndarray] = {}

    def cached_step(tokens):
        if tokens not in cache:
            cache[tokens] = step_fn(tokens)
        return cache[tokens]

    best, truncated = _beam_pass(cached_step, vocab_size, eos_id,
                                 context_tokens, cfg, cfg.beam_size, counters)
    if not truncated:
        return best
    for width in range(1, cfg.beam_size):
        # auxiliary narrow passes run without the all-banned step retry:
        # a dead-ended pass is simply skipped, because the full-width pass
        # above already produced a legal output
        try:
            hyp, _ = _beam_pass(cached_step, vocab_size, eos_id,
                                context_tokens, cfg, width, counters,
                                allow_retry=False)
        except DecodeError:
            continue
        if (-hyp.logp, hyp.tokens) < (-best.logp, best.tokens):
            best = hyp
    return best


def _beam_pass(step_fn, vocab_size, eos_id, context_tokens, cfg: BeamConfig,
               width: int, counters, allow_retry: bool = True):
    """One fixed-width pass; finished hypotheses are never evicted.

    A hypothesis whose every extension is banned is a dead end and is
    dropped. If an entire step dies with nothing finished yet, the step
    is retried once with blocking relaxed and the fallback counter is
    bumped (unless allow_retry is off).

    Returns (best hypothesis, truncated flag); the flag records whether
    the width bound ever discarded a candidate.
    """
    def expand(parents, relax):
        cands, done = [], []
        for hyp in parents:
            lp = _constrained_logprobs(step_fn(hyp.tokens), hyp.tokens,
                                       context_tokens, cfg, eos_id, relax)
            for t in range(vocab_size):
                if np.isinf(lp[t]):
                    continue
                cand = Hypothesis(hyp.tokens + (t,),
                                  hyp.logp + float(lp[t]), t == eos_id)
                (done if cand.finished else cands).append(cand)
        return cands, done

    truncated = False
    beam = [Hypothesis((), 0.0, False)]
    finished: list[Hypothesis] = []      # never evicted once found
    for _ in range(cfg.max_length):
        candidates, newly_done = expand(beam, relax=False)
        if not candidates and not newly_done and not finished and allow_retry:
            counters["all_banned_fallback"] = \
                counters.get("all_banned_fallback", 0) + 1
            candidates, newly_done = expand(beam, relax=True)
        finished.extend(newly_done)
        if not candidates:
            break
        if len(candidates) > width:
            truncated = True
        candidates.sort(key=lambda h: (-h.logp, h.tokens))
        beam = candidates[:width]
    if not finished and beam and len(beam[0].tokens) < cfg.max_length:
        # the surviving beam dead-ended before the horizon; its entries
        # are not legal results
        beam = []
    pool = finished if finished else beam
    if not pool:
        raise DecodeError("no legal sequence under the given constraints")
    return min(pool, key=lambda h: (-h.logp, h.tokens)), truncated


def exhaustive_oracle(step_fn, vocab_size, eos_id, context_tokens,
                      cfg: BeamConfig, counters=None) -> Hypothesis:
    """Enumerate every sequence under identical constraints; argmax log-prob.

    Refuses search spaces beyond vocab_size ** max_length > 1e7.
    """
    if vocab_size ** cfg.max_length > 1e7:
        raise DecodeError("exhaustive oracle search space too large")
    best = {"finished": None, "open": None}

    def consider(h: Hypothesis):
        key = "finished" if h.finished else "open"
        b = best[key]
        if b is None or (-h.logp, h.tokens) < (-b.logp, b.tokens):
            best[key] = h

    def dfs(tokens: tuple, logp: float):
        if len(tokens) == cfg.max_length:
            consider(Hypothesis(tokens, logp, False))
            return
        lp = _constrained_logprobs(step_fn(tokens), tokens, context_tokens,
                                   cfg, eos_id, relax=False)
        for t in range(vocab_size):
            if np.isinf(lp[t]):
                continue
            if t == eos_id:
                consider(Hypothesis(tokens + (t,), logp + float(lp[t]), True))
            else:
                dfs(tokens + (t,), logp + float(lp[t]))

    dfs((), 0.0)
    # a finished sequence wins over any unfinished one, same pool rule as
    # beam_search
    if best["finished"] is not None:
        return best["finished"]
    if best["open"] is None:
        raise DecodeError("oracle found no legal sequence")
    return best["open"]


def model_step_fn(params, config, memory, memory_mask, bos_id):
    """Adapt a trained model to the step_fn interface (single example)."""
    def step(tokens):
        prefix = np.array([[bos_id, *tokens]], dtype=np.int64)
        logits = decode_step(params, config, memory, memory_mask, prefix)
        x = logits[0].astype(np.float64)
        x -= x.max()
        return x - np.log(np.exp(x).sum())
    return step


def generate(params, config, vocab, memory, memory_mask, context_ids,
             cfg: BeamConfig, counters=None) -> Hypothesis:
    """Beam-decode one example; context_ids feed the context blocker."""
    step = model_step_fn(params, config, memory, memory_mask, vocab.bos_id)
    return beam_search(step, config.vocab_size, vocab.eos_id,
                       tuple(context_ids), cfg, counters)
