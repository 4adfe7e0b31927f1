"""Deterministic desk-scale testbed.

A hash-seeded bag-of-ngrams embedder stands in for a real text encoder,
and a synthetic coherent offset plus per-item noise stands in for the
vision/text modality gap. Both are bit-reproducible across runs and
platforms.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .corpus import CaptionRecord
from .embedding import normalize
from .errors import DataError, EmptyInputError
from .train import TrainConfig


@dataclass(frozen=True)
class ToyEmbedder:
    """Deterministic text embedder over unigrams and bigrams."""

    dim: int = 64
    seed: int = 0
    ngram_orders: tuple[int, ...] = (1, 2)


def _hash_unit(key: str, dim: int) -> np.ndarray:
    digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
    gen = np.random.Generator(np.random.PCG64(int.from_bytes(digest, "little")))
    return normalize(gen.standard_normal(dim))


def toy_embed(tokens: list[str], emb: ToyEmbedder) -> np.ndarray:
    """Normalized sum of hash-derived unit vectors per n-gram."""
    if not tokens:
        raise EmptyInputError("cannot embed empty text")
    total = np.zeros(emb.dim)
    for order in emb.ngram_orders:
        for i in range(len(tokens) - order + 1):
            gram = " ".join(tokens[i : i + order])
            total += _hash_unit(f"{emb.seed}|{order}|{gram}", emb.dim)
    return normalize(total)


@dataclass(frozen=True)
class GapSpec:
    """Synthetic modality gap: one shared offset plus per-item noise."""

    offset_scale: float = 0.5
    rotation_seed: int = 0
    noise_scale: float = 0.05

    def __post_init__(self):
        if self.offset_scale < 0 or self.noise_scale < 0:
            raise DataError("gap scales must be non-negative")


def gap_offset(spec: GapSpec, dim: int) -> np.ndarray:
    """The fixed unit offset direction shared by every item."""
    gen = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([spec.rotation_seed, dim]))
    )
    return normalize(gen.standard_normal(dim))


def synth_vision(
    text_feat: np.ndarray, spec: GapSpec, rng: np.random.Generator
) -> np.ndarray:
    """Shift a text feature across the synthetic modality gap."""
    v = np.asarray(text_feat, dtype=np.float64)
    if spec.offset_scale == 0.0 and spec.noise_scale == 0.0:
        return v.copy()
    shifted = v + spec.offset_scale * gap_offset(spec, v.shape[0])
    if spec.noise_scale > 0.0:
        shifted = shifted + rng.normal(0.0, spec.noise_scale, size=v.shape)
    return normalize(shifted)


# ---------------------------------------------------------------------------
# toy corpus
# ---------------------------------------------------------------------------

_SUBJECTS = [
    "young girl", "old man", "small dog", "tall woman", "little boy",
    "black cat", "white horse", "tiny bird", "big bear", "red fox",
]
_VERBS = ["plays", "runs", "sleeps", "jumps", "walks", "sits", "sings", "eats"]
_PLACES = [
    "in the park", "on the beach", "near the river", "in the garden",
    "on the street", "in the snow", "near the lake", "on the grass",
]

TOY_STOPWORDS = frozenset("a the in on near".split())


def toy_corpus(n: int, seed: int = 0, lang: str = "en") -> list[CaptionRecord]:
    """Templated sentences like 'a young girl plays in the park'."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, n])))
    records = []
    for _ in range(n):
        subj = _SUBJECTS[rng.integers(len(_SUBJECTS))]
        verb = _VERBS[rng.integers(len(_VERBS))]
        place = _PLACES[rng.integers(len(_PLACES))]
        records.append(CaptionRecord(f"a {subj} {verb} {place}".split(), None, lang))
    return records


# ---------------------------------------------------------------------------
# ablation harness
# ---------------------------------------------------------------------------

def ablation_name(flags: dict) -> str:
    parts = [tag for tag, key in (("cp", "use_cp"), ("ia", "use_ia"),
                                  ("fa", "use_fa")) if flags.get(key)]
    return "+".join(parts) if parts else "base"


def run_ablation(
    corpus: list[CaptionRecord],
    configs: list[dict],
    gap: GapSpec,
    seeds: list[int],
    run_cfg: dict,
) -> dict:
    """Train one model per (component config, seed) on held-in text and
    score captions generated from gap-shifted features of held-out text.

    Failures are recorded per cell; the other cells still run. Returns
    {"cells": {name: {seed: report|{"error"}}}, "summary": {...}}.
    """
    from .config import train_config_from
    from .pipeline import embedder_from, run_text_training, score_text_autoencoding
    from .rng import named_rng

    frac = run_cfg["ablation"]["eval_fraction"]
    n_eval = max(1, int(round(len(corpus) * frac)))
    if n_eval >= len(corpus):
        raise DataError("eval_fraction leaves no training text")
    train_records = corpus[: len(corpus) - n_eval]
    eval_records = corpus[len(corpus) - n_eval :]

    base = train_config_from(run_cfg)
    cells: dict[str, dict] = {}
    for flags in configs:
        name = ablation_name(flags)
        cells[name] = {}
        for seed in seeds:
            t_cfg = TrainConfig(
                lr=base.lr, warmup_fraction=base.warmup_fraction,
                epochs=base.epochs, batch_size=base.batch_size,
                weight_decay=base.weight_decay,
                label_smoothing=base.label_smoothing,
                k_prompts=base.k_prompts if flags.get("use_cp") else 0,
                n_candidates=base.n_candidates if flags.get("use_ia") else 1,
                epsilon=base.epsilon if flags.get("use_fa") else 0.0,
                seed=seed, mode="text_only",
            )
            try:
                result = run_text_training(train_records, run_cfg, train_cfg=t_cfg)
                report = score_text_autoencoding(
                    result.params, eval_records, embedder_from(run_cfg),
                    result.bank, result.data, _with_train(run_cfg, t_cfg),
                    greedy=run_cfg["decode"]["greedy"],
                    gap=gap, gap_rng=named_rng(seed, "gap-eval"),
                )
                cells[name][str(seed)] = report
            except Exception as exc:  # keep the other cells alive
                cells[name][str(seed)] = {"error": f"{type(exc).__name__}: {exc}"}
    summary = {}
    for name, per_seed in cells.items():
        oks = [r for r in per_seed.values() if "error" not in r]
        if not oks:
            summary[name] = {"error": "all cells failed"}
            continue
        summary[name] = {
            metric: {
                "mean": float(np.mean([r[metric] for r in oks])),
                "std": float(np.std([r[metric] for r in oks])),
            }
            for metric in ("bleu4", "rouge_l", "cider")
        }
    return {"cells": cells, "summary": summary}


def _with_train(run_cfg: dict, t_cfg) -> dict:
    """Copy of the run config with the train section swapped in."""
    from dataclasses import asdict
    import copy

    out = copy.deepcopy(run_cfg)
    out["train"] = asdict(t_cfg)
    return out
