"""End-to-end assembly: corpus -> concepts -> features -> training -> captions.

The CLI, the ablation harness, and the round-trip checks all drive the
same functions here, so a full run behaves identically no matter which
surface invoked it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .concepts import (
    extract_concepts,
    embed_concepts,
    read_concepts_file,
    stopwords_for,
)
from .config import decoder_config_from, train_config_from
from .corpus import CaptionRecord, Vocabulary, build_vocab
from .decoder import DecoderConfig, DecoderParameters, init_parameters
from .embedding import ConceptBank
from .errors import DataError
from .generate import caption
from .metrics import EvalCorpus, EvalItem, evaluate
from .rng import named_rng
from .testbed import GapSpec, ToyEmbedder, synth_vision, toy_embed
from .train import TrainConfig, TrainData, prepare_training_data, train_text_only


def embedder_from(cfg: dict):
    """The run's text embedder as a token-list -> vector callable."""
    emb = ToyEmbedder(dim=cfg["embedder"]["dim"], seed=cfg["embedder"]["seed"])
    return lambda tokens: toy_embed(tokens, emb)


def build_bank(records: list[CaptionRecord], cfg: dict, embed_fn) -> ConceptBank:
    """Concept bank from the configured source: file or extraction."""
    spec = cfg["concepts"]
    if spec.get("file"):
        vocab = read_concepts_file(spec["file"], cap=spec["cap"])
    else:
        stop = spec.get("stopwords")
        if stop is not None:
            stop = frozenset(s.lower() for s in stop)
        else:
            langs = {r.lang for r in records}
            stop = frozenset().union(*(stopwords_for(l) for l in langs))
        vocab = extract_concepts(records, cap=spec["cap"], stopwords=stop,
                                 max_len=spec["max_len"])
    return embed_concepts(vocab, embed_fn)


@dataclass
class TextRunResult:
    params: DecoderParameters
    model_cfg: DecoderConfig
    data: TrainData
    bank: ConceptBank
    history: list[dict] = field(default_factory=list)


def run_text_training(
    records: list[CaptionRecord],
    cfg: dict,
    train_cfg: TrainConfig | None = None,
    log_fn=None,
    val_records: list[CaptionRecord] | None = None,
    val_every: int = 0,
) -> TextRunResult:
    """Train from scratch on a text corpus per the run config.

    When `val_records` and `val_every` are set, greedy auto-encoding
    CIDEr on the validation text selects the best epoch's weights.
    """
    t_cfg = train_cfg or train_config_from(cfg)
    embed_fn = embedder_from(cfg)
    languages = list(cfg["languages"])
    vocab = build_vocab(records)
    bank = build_bank(records, cfg, embed_fn)
    if bank.dim != cfg["embedder"]["dim"]:
        raise DataError(f"bank dim {bank.dim} vs embedder dim {cfg['embedder']['dim']}")
    data = prepare_training_data(records, embed_fn, bank, t_cfg, vocab, languages)
    model_cfg = decoder_config_from(cfg, len(vocab), len(languages))
    params = None
    best: dict = {"cider": -1.0, "arrays": None}

    callback = None
    if val_records and val_every > 0:
        def callback(epoch):
            if (epoch + 1) % val_every != 0:
                return False
            rep = score_text_autoencoding(
                params, val_records, embed_fn, bank, data, cfg, greedy=True
            )
            if rep["cider"] > best["cider"]:
                best["cider"] = rep["cider"]
                best["arrays"] = {k: t.values.copy() for k, t in params.tensors.items()}
            return False

    params = init_parameters(model_cfg, named_rng(t_cfg.seed, "init"))
    params, history = train_text_only(
        data, model_cfg, t_cfg, params=params, log_fn=log_fn,
        epoch_callback=callback,
    )
    if best["arrays"] is not None:
        final = score_text_autoencoding(
            params, val_records, embed_fn, bank, data, cfg, greedy=True
        )
        if final["cider"] < best["cider"]:
            for k, t in params.tensors.items():
                t.values[:] = best["arrays"][k]
    return TextRunResult(params, model_cfg, data, bank, history)


def caption_from_features(
    features_by_item: list[tuple[str, list[np.ndarray]]],
    result_or_params,
    bank: ConceptBank,
    vocab: Vocabulary,
    languages: list[str],
    lang: str,
    t_cfg: TrainConfig,
    decode: dict,
) -> list[dict]:
    """Caption each (id, frame rows) group; rows as JSONL-ready dicts."""
    params = (
        result_or_params.params
        if isinstance(result_or_params, TextRunResult)
        else result_or_params
    )
    try:
        lang_idx = languages.index(lang)
    except ValueError:
        raise DataError(f"language '{lang}' not in configured set {languages}")
    out = []
    for item_id, rows in features_by_item:
        res = caption(
            rows, lang_idx, bank, params,
            beam_size=decode["beam_size"], max_len=decode["max_len"],
            k_prompts=t_cfg.k_prompts, length_penalty=decode["length_penalty"],
            greedy=decode["greedy"], vocab=vocab,
        )
        out.append(
            {
                "id": item_id,
                "caption": " ".join(res.token_strings),
                "prompts": res.prompts.surfaces,
                "logprob": res.logprob,
            }
        )
    return out


def score_text_autoencoding(
    params: DecoderParameters,
    records: list[CaptionRecord],
    embed_fn,
    bank: ConceptBank,
    data: TrainData,
    cfg: dict,
    greedy: bool = True,
    gap: GapSpec | None = None,
    gap_rng: np.random.Generator | None = None,
) -> dict:
    """Caption each record from its own text feature (optionally pushed
    across a synthetic gap) and score against the record itself."""
    t_cfg = train_config_from(cfg)
    decode = dict(cfg["decode"])
    decode["greedy"] = greedy
    items = []
    feats = []
    for i, rec in enumerate(records):
        f = embed_fn(rec.source)
        f = f / np.linalg.norm(f)
        if gap is not None:
            f = synth_vision(f, gap, gap_rng or named_rng(0, "gap-eval"))
        feats.append((str(i), [f]))
    rows = caption_from_features(
        feats, params, bank, data.vocab, data.languages,
        records[0].lang, t_cfg, decode,
    )
    for rec, row in zip(records, rows):
        items.append(
            EvalItem(row["id"], row["caption"].split(), [rec.output_tokens])
        )
    return evaluate(EvalCorpus(items))


def reconstruction_rate(
    params: DecoderParameters,
    records: list[CaptionRecord],
    embed_fn,
    bank: ConceptBank,
    data: TrainData,
    cfg: dict,
) -> float:
    """Fraction of records whose greedy round trip is an exact match."""
    t_cfg = train_config_from(cfg)
    decode = dict(cfg["decode"])
    decode["greedy"] = True
    hits = 0
    for rec in records:
        f = embed_fn(rec.source)
        f = f / np.linalg.norm(f)
        rows = caption_from_features(
            [("0", [f])], params, bank, data.vocab, data.languages,
            rec.lang, t_cfg, decode,
        )
        if rows[0]["caption"].split() == rec.output_tokens:
            hits += 1
    return hits / len(records)
