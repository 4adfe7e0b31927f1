"""Caption generation: pooled feature -> retrieved prompts -> decoding.

Beam search keeps finished hypotheses frozen and lets them compete with
active ones on the final score; with zero length penalty the score is
the plain log-probability sum, so an active beam's current score is an
upper bound on anything it can become.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .corpus import BOS, EOS
from .decoder import DecoderParameters, build_input, decode_logits
from .embedding import ConceptBank, PromptSet, pool_frames, retrieve_prompts
from .errors import BoundError, CapacityError

DEFAULT_BEAM_SIZE = 3
DEFAULT_MAX_LEN = 30


def log_softmax(v: np.ndarray) -> np.ndarray:
    m = v.max()
    return v - (m + np.log(np.exp(v - m).sum()))


@dataclass
class Beam:
    """One hypothesis: generated ids (EOS excluded), summed log-prob."""

    tokens: list[int]
    logprob: float = 0.0
    finished: bool = False

    def score(self, length_penalty: float) -> float:
        if length_penalty == 0.0:
            return self.logprob
        return self.logprob / (max(1, len(self.tokens)) ** length_penalty)


def decoder_step_fn(
    params: DecoderParameters,
    prompts: PromptSet,
    feature: np.ndarray,
    lang: int,
):
    """step(prefix ids) -> log-distribution over the next token."""

    def step(prefix: list[int]) -> np.ndarray:
        with ad.no_grad():
            seq = build_input(prompts, [BOS] + list(prefix), lang, params)
            logits = decode_logits(params, seq, feature)
        return log_softmax(logits.values[-1])

    return step


def greedy_decode(step_fn, max_len: int, eos_id: int = EOS) -> Beam:
    """Argmax chain; ties go to the lowest token id."""
    if max_len < 1:
        raise BoundError("max_len must be at least 1")
    beam = Beam([], 0.0)
    for _ in range(max_len):
        lp = step_fn(beam.tokens)
        tok = int(np.argmax(lp))
        beam.logprob += float(lp[tok])
        if tok == eos_id:
            beam.finished = True
            break
        beam.tokens.append(tok)
    return beam


def beam_search(
    step_fn,
    beam_size: int,
    max_len: int,
    length_penalty: float = 0.0,
    eos_id: int = EOS,
) -> list[Beam]:
    """Standard beam search; returns hypotheses ranked by final score."""
    if max_len < 1:
        raise BoundError("max_len must be at least 1")
    if beam_size < 1:
        raise BoundError("beam_size must be at least 1")
    beams = [Beam([], 0.0)]
    for _ in range(max_len):
        candidates: list[Beam] = []
        for beam in beams:
            if beam.finished:
                candidates.append(beam)
                continue
            lp = step_fn(beam.tokens)
            top = np.argsort(-lp, kind="stable")[:beam_size]
            for tok in top:
                tok = int(tok)
                total = beam.logprob + float(lp[tok])
                if tok == eos_id:
                    candidates.append(Beam(beam.tokens, total, finished=True))
                else:
                    candidates.append(Beam(beam.tokens + [tok], total))
        candidates.sort(key=lambda b: -b.score(length_penalty))
        beams = candidates[:beam_size]
        best_finished = max(
            (b.score(length_penalty) for b in beams if b.finished), default=None
        )
        if best_finished is not None:
            # raw log-prob only decreases; bound the best reachable score
            def bound(b: Beam) -> float:
                if length_penalty == 0.0:
                    return b.logprob
                return b.logprob / (max_len ** length_penalty)

            actives = [b for b in beams if not b.finished]
            if not actives or best_finished >= max(bound(b) for b in actives):
                break
        if all(b.finished for b in beams):
            break
    beams.sort(key=lambda b: -b.score(length_penalty))
    return beams


@dataclass
class CaptionResult:
    token_ids: list[int]
    prompts: PromptSet
    logprob: float
    finished: bool = True
    token_strings: list[str] = field(default_factory=list)


def caption(
    vision_rows: list[np.ndarray],
    lang: int,
    bank: ConceptBank,
    params: DecoderParameters,
    beam_size: int = DEFAULT_BEAM_SIZE,
    max_len: int = DEFAULT_MAX_LEN,
    k_prompts: int = 16,
    length_penalty: float = 0.0,
    greedy: bool = False,
    vocab=None,
) -> CaptionResult:
    """Pool frames, retrieve prompts, decode the best hypothesis."""
    pooled = pool_frames(vision_rows)
    prompts = retrieve_prompts(pooled, bank, k_prompts)
    # room for BOS plus generated tokens inside the model window
    cap = params.config.max_len - k_prompts - 1
    if cap < 1:
        raise CapacityError(
            f"max_len {params.config.max_len} leaves no room after {k_prompts} prompts"
        )
    steps = min(max_len, cap)
    step_fn = decoder_step_fn(params, prompts, pooled, lang)
    if greedy or beam_size == 1:
        best = greedy_decode(step_fn, steps)
    else:
        best = beam_search(step_fn, beam_size, steps, length_penalty)[0]
    strings = vocab.decode(best.tokens) if vocab is not None else []
    return CaptionResult(
        token_ids=list(best.tokens),
        prompts=prompts,
        logprob=best.logprob,
        finished=best.finished,
        token_strings=strings,
    )


def sequence_logprob(
    params: DecoderParameters,
    prompts: PromptSet,
    feature: np.ndarray,
    lang: int,
    token_ids: list[int],
    include_eos: bool = True,
) -> float:
    """Score of a finished/capped hypothesis from one forward pass."""
    with ad.no_grad():
        seq = build_input(prompts, [BOS] + list(token_ids), lang, params)
        logits = decode_logits(params, seq, feature).values
    rows = np.apply_along_axis(log_softmax, 1, logits)
    total = sum(float(rows[i, tok]) for i, tok in enumerate(token_ids))
    if include_eos:
        total += float(rows[len(token_ids), EOS])
    return total
