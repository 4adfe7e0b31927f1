"""Text-only auto-encoding / translation training with AdamW.

Each step: per record, sample a neighbor sentence, noise its cached
feature, retrieve prompts from the noised feature, then teacher-force
the record's own clean target under smoothed cross entropy. Gradients
are clipped at global norm 1.0 before the decoupled-decay Adam update.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .augment import (
    CandidateSet,
    NoiseConfig,
    build_candidate_sets_grouped,
    feature_augment,
    input_augment,
)
from .corpus import BOS, EOS, PAD, CaptionRecord, Vocabulary, build_vocab
from .decoder import (
    DecoderConfig,
    DecoderParameters,
    build_input,
    decode_logits,
    init_parameters,
)
from .embedding import (
    ConceptBank,
    empty_prompts,
    normalize,
    pool_frames,
    retrieve_prompts,
)
from .errors import BoundError, DataError, DimensionError, EmptyInputError, NumericError
from .rng import named_rng, step_rng

GRAD_CLIP_NORM = 1.0
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    lr: float = 1e-4
    warmup_fraction: float = 0.10
    epochs: int = 10
    batch_size: int = 32
    weight_decay: float = 0.01
    label_smoothing: float = 0.1
    k_prompts: int = 16
    n_candidates: int = 5
    epsilon: float = 0.01
    seed: int = 0
    mode: str = "text_only"

    def __post_init__(self):
        if self.mode not in ("text_only", "paired"):
            raise DataError(f"unknown training mode '{self.mode}'")
        if not 0.0 <= self.warmup_fraction <= 1.0:
            raise DataError("warmup_fraction must lie in [0, 1]")


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0


def init_optimizer(params: DecoderParameters) -> OptimizerState:
    return OptimizerState(
        m={k: np.zeros_like(t.values) for k, t in params.tensors.items()},
        v={k: np.zeros_like(t.values) for k, t in params.tensors.items()},
    )


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear 0 -> lr over the first ceil(warmup * total) steps, then flat."""
    if not 0 <= step <= total_steps:
        raise BoundError(f"step {step} outside [0, {total_steps}]")
    warmup_steps = math.ceil(cfg.warmup_fraction * total_steps)
    if warmup_steps == 0:
        return cfg.lr
    return cfg.lr * min(1.0, step / warmup_steps)


def adamw_step(
    params: DecoderParameters,
    grads: dict[str, np.ndarray],
    opt: OptimizerState,
    lr_t: float,
    cfg: TrainConfig,
) -> None:
    """One decoupled-weight-decay Adam update, in place."""
    opt.t += 1
    bc1 = 1.0 - ADAM_BETA1**opt.t
    bc2 = 1.0 - ADAM_BETA2**opt.t
    for name, tensor in params.tensors.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(tensor.values)
        if g.shape != tensor.values.shape:
            raise DimensionError(f"grad shape {g.shape} vs param {tensor.values.shape} for {name}")
        m = opt.m[name]
        v = opt.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        tensor.values -= lr_t * cfg.weight_decay * tensor.values
        tensor.values -= lr_t * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients so the global norm is at most max_norm."""
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm > 0.0:
        factor = max_norm / total
        for g in grads.values():
            g *= factor
    return total


@dataclass
class RngStreams:
    ia: np.random.Generator
    fa: np.random.Generator


@dataclass
class TrainData:
    """Everything a text-only run needs, prepared once."""

    records: list[CaptionRecord]
    vocab: Vocabulary
    languages: list[str]
    features: np.ndarray  # [M x d] cached unit features of the sources
    bank: ConceptBank
    candidates: list[CandidateSet]

    def lang_index(self, lang: str) -> int:
        try:
            return self.languages.index(lang)
        except ValueError:
            raise DataError(f"language '{lang}' not in configured set {self.languages}")


def prepare_training_data(
    records: list[CaptionRecord],
    embed_fn,
    bank: ConceptBank,
    cfg: TrainConfig,
    vocab: Vocabulary | None = None,
    languages: list[str] | None = None,
) -> TrainData:
    """Cache features and neighbor sets for a text corpus."""
    if not records:
        raise EmptyInputError("empty training corpus")
    if languages is None:
        languages = sorted({r.lang for r in records})
    for r in records:
        if r.lang not in languages:
            raise DataError(f"record language '{r.lang}' outside {languages}")
    if vocab is None:
        vocab = build_vocab(records)
    features = np.asarray([normalize(embed_fn(r.source)) for r in records])
    candidates = build_candidate_sets_grouped(
        features, [r.lang for r in records], cfg.n_candidates
    )
    return TrainData(records, vocab, list(languages), features, bank, candidates)


def teacher_pair(tokens: list[str], vocab: Vocabulary) -> tuple[list[int], list[int]]:
    """Decoder input ids (BOS-prefixed) and shifted target ids (EOS-capped)."""
    ids = vocab.encode(tokens)
    return [BOS] + ids, ids + [EOS]


def _step(
    batch: list[int],
    records: list[CaptionRecord],
    feature_for,
    bank: ConceptBank,
    vocab: Vocabulary,
    lang_index,
    params: DecoderParameters,
    opt: OptimizerState,
    cfg: TrainConfig,
    lr_t: float,
    dropout_rng: np.random.Generator | None,
) -> float:
    if len(batch) == 0:
        raise EmptyInputError("empty training batch")
    losses = []
    for idx in batch:
        rec = records[idx]
        feat = feature_for(idx)
        if cfg.k_prompts == 0:
            prompts = empty_prompts(len(feat))
        else:
            prompts = retrieve_prompts(feat, bank, cfg.k_prompts)
        in_ids, tgt_ids = teacher_pair(rec.output_tokens, vocab)
        seq = build_input(prompts, in_ids, lang_index(rec.lang), params)
        logits = decode_logits(params, seq, feat, dropout_rng)
        losses.append(
            ad.softmax_cross_entropy_smoothed(
                logits, tgt_ids, cfg.label_smoothing, ignore_index=PAD
            )
        )
    total = losses[0]
    for extra in losses[1:]:
        total = ad.add(total, extra)
    loss = ad.scale(total, 1.0 / len(losses))
    if not np.isfinite(loss.item()):
        raise NumericError("non-finite training loss")
    loss.backward()
    grads = {
        name: (t.grad if t.grad is not None else np.zeros_like(t.values))
        for name, t in params.tensors.items()
    }
    clip_gradients(grads, GRAD_CLIP_NORM)
    adamw_step(params, grads, opt, lr_t, cfg)
    return loss.item()


def train_step(
    batch: list[int],
    data: TrainData,
    params: DecoderParameters,
    opt: OptimizerState,
    cfg: TrainConfig,
    streams: RngStreams,
    lr_t: float,
    dropout_rng: np.random.Generator | None = None,
) -> float:
    """One text-only step over `batch` (corpus indices); pre-update loss."""

    def feature_for(idx: int) -> np.ndarray:
        cand = data.candidates[idx]
        if len(cand.member_indices) != cfg.n_candidates:
            raise DataError(
                f"candidate set of anchor {idx} has {len(cand.member_indices)} "
                f"members, config wants n_candidates={cfg.n_candidates}"
            )
        j = input_augment(cand, streams.ia)
        return feature_augment(
            data.features[j], NoiseConfig(cfg.epsilon, cfg.seed), streams.fa
        )

    return _step(
        batch, data.records, feature_for, data.bank, data.vocab,
        data.lang_index, params, opt, cfg, lr_t, dropout_rng,
    )


def _run_epochs(
    n_records: int,
    run_step,
    cfg: TrainConfig,
    log_fn=None,
    epoch_callback=None,
) -> list[dict]:
    steps_per_epoch = math.ceil(n_records / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    shuffle = named_rng(cfg.seed, "batch-shuffle")
    history = []
    step = 0
    for epoch in range(cfg.epochs):
        order = shuffle.permutation(n_records)
        for b0 in range(0, n_records, cfg.batch_size):
            batch = [int(i) for i in order[b0 : b0 + cfg.batch_size]]
            step += 1
            lr_t = lr_at(step, total_steps, cfg)
            started = time.perf_counter()
            loss = run_step(batch, lr_t, step)
            entry = {
                "step": step,
                "lr": lr_t,
                "loss": loss,
                "wall_ms": round((time.perf_counter() - started) * 1000.0, 3),
            }
            history.append(entry)
            if log_fn is not None:
                log_fn(entry)
        if epoch_callback is not None and epoch_callback(epoch):
            break
    return history


def train_text_only(
    data: TrainData,
    model_cfg: DecoderConfig,
    cfg: TrainConfig,
    params: DecoderParameters | None = None,
    opt: OptimizerState | None = None,
    log_fn=None,
    epoch_callback=None,
) -> tuple[DecoderParameters, list[dict]]:
    """Full auto-encoding/translation run; returns params and history."""
    if params is None:
        params = init_parameters(model_cfg, named_rng(cfg.seed, "init"))
    if opt is None:
        opt = init_optimizer(params)
    streams = RngStreams(ia=named_rng(cfg.seed, "ia"), fa=named_rng(cfg.seed, "fa"))

    def run(batch, lr_t, step):
        dr = step_rng(cfg.seed, "dropout", step) if model_cfg.dropout > 0 else None
        return train_step(batch, data, params, opt, cfg, streams, lr_t, dr)

    history = _run_epochs(
        len(data.records), run, cfg, log_fn=log_fn, epoch_callback=epoch_callback
    )
    return params, history


def fine_tune_paired(
    pairs: list[tuple[list[np.ndarray], CaptionRecord]],
    bank: ConceptBank,
    vocab: Vocabulary,
    languages: list[str],
    params: DecoderParameters,
    cfg: TrainConfig,
    opt: OptimizerState | None = None,
    log_fn=None,
) -> tuple[DecoderParameters, list[dict]]:
    """Continue training on vision-caption pairs; no IA/FA on features."""
    if cfg.mode != "paired":
        raise DataError("fine_tune_paired requires mode == 'paired'")
    if not pairs:
        return params, []
    records = []
    feats = []
    for i, (frames, rec) in enumerate(pairs):
        if not frames:
            raise DataError(f"pair {i} has no vision feature rows")
        feats.append(pool_frames(frames))
        records.append(rec)
    feats = np.asarray(feats)
    if opt is None:
        opt = init_optimizer(params)

    def lang_index(lang: str) -> int:
        try:
            return languages.index(lang)
        except ValueError:
            raise DataError(f"language '{lang}' not in configured set {languages}")

    def run(batch, lr_t, step):
        dr = (
            step_rng(cfg.seed, "dropout", step)
            if params.config.dropout > 0
            else None
        )
        return _step(
            batch, records, lambda idx: feats[idx], bank, vocab,
            lang_index, params, opt, cfg, lr_t, dr,
        )

    history = _run_epochs(len(records), run, cfg, log_fn=log_fn)
    return params, history
