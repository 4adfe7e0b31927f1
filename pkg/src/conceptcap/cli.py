"""Command-line surface.

Every subcommand takes --config <file> and --seed <int>, prints one JSON
result line on success, and exits 0. Usage problems exit 1, data
problems 2, numeric failures 3.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .augment import build_candidate_sets_grouped, save_candidate_sets
from .concepts import extract_concepts, read_concepts_file, stopwords_for
from .config import (
    default_run_config,
    gap_spec_from,
    load_run_config,
    require_path,
    train_config_from,
)
from .corpus import build_vocab, load_corpus
from .embedding import ConceptBank, gap_report
from .errors import (
    ConceptCapError,
    DataError,
    NumericError,
    UsageError,
)
from .fileio import (
    checkpoint_fingerprint,
    load_checkpoint,
    load_unit_embeddings,
    read_eval_corpus,
    save_checkpoint,
    write_embeddings,
    write_jsonl,
)
from .metrics import evaluate
from .pipeline import (
    build_bank,
    caption_from_features,
    embedder_from,
    run_text_training,
)
from .testbed import run_ablation, toy_corpus
from .train import fine_tune_paired


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n\n{self.format_help()}")


def _emit(obj: dict) -> None:
    print(json.dumps(obj, sort_keys=True))


def _load(args) -> dict:
    cfg = load_run_config(args.config)
    if args.seed is not None:
        cfg["train"]["seed"] = args.seed
        cfg["gap"]["rotation_seed"] = cfg["gap"]["rotation_seed"] or args.seed
    return cfg


def _records(cfg, key="corpus"):
    return load_corpus(require_path(cfg, key))


def cmd_extract_concepts(args) -> dict:
    cfg = _load(args)
    records = _records(cfg)
    spec = cfg["concepts"]
    if spec.get("file"):
        vocab = read_concepts_file(spec["file"], cap=spec["cap"])
    else:
        stop = spec.get("stopwords")
        stop = (
            frozenset(s.lower() for s in stop)
            if stop is not None
            else frozenset().union(*(stopwords_for(r.lang) for r in records))
        )
        vocab = extract_concepts(records, cap=spec["cap"], stopwords=stop,
                                 max_len=spec["max_len"])
    out = Path(require_path(cfg, "concepts"))
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(vocab.phrases) + "\n", encoding="utf-8")
    return {"command": "extract-concepts", "n_concepts": len(vocab),
            "path": str(out)}


def cmd_embed(args) -> dict:
    cfg = _load(args)
    embed_fn = embedder_from(cfg)
    if args.what == "concepts":
        bank = build_bank(_records(cfg), cfg, embed_fn)
        out = require_path(cfg, "bank")
        write_embeddings(out, bank.features, bank.surfaces)
        return {"command": "embed", "what": "concepts", "rows": len(bank),
                "dim": bank.dim, "path": out}
    records = _records(cfg)
    feats = np.asarray([embed_fn(r.source) for r in records])
    out = require_path(cfg, "embeddings")
    write_embeddings(out, feats, [str(i) for i in range(len(records))])
    return {"command": "embed", "what": "corpus", "rows": len(records),
            "dim": feats.shape[1], "path": out}


def cmd_build_candidates(args) -> dict:
    cfg = _load(args)
    records = _records(cfg)
    t_cfg = train_config_from(cfg)
    embed_fn = embedder_from(cfg)
    feats = np.asarray([embed_fn(r.source) for r in records])
    feats /= np.linalg.norm(feats, axis=1, keepdims=True)
    sets = build_candidate_sets_grouped(
        feats, [r.lang for r in records], t_cfg.n_candidates
    )
    out = require_path(cfg, "candidates")
    save_candidate_sets(out, sets)
    return {"command": "build-candidates", "n_sets": len(sets),
            "n_candidates": t_cfg.n_candidates, "path": out}


def _finish_training(cfg, result, t_cfg, out_dir: Path) -> dict:
    ckpt = out_dir / "checkpoint"
    save_checkpoint(
        ckpt, result.params, result.data.vocab, result.data.languages,
        asdict(t_cfg), step_count=len(result.history), seed=t_cfg.seed,
    )
    write_embeddings(out_dir / "bank.mce", result.bank.features,
                     result.bank.surfaces)
    final_loss = result.history[-1]["loss"] if result.history else None
    return {
        "checkpoint": str(ckpt),
        "hash": checkpoint_fingerprint(ckpt),
        "bank": str(out_dir / "bank.mce"),
        "steps": len(result.history),
        "final_loss": final_loss,
    }


def cmd_train(args) -> dict:
    cfg = _load(args)
    records = _records(cfg)
    t_cfg = train_config_from(cfg)
    out_dir = Path(require_path(cfg, "out_dir"))
    out_dir.mkdir(parents=True, exist_ok=True)
    log_rows: list[dict] = []
    result = run_text_training(records, cfg, train_cfg=t_cfg,
                               log_fn=log_rows.append)
    write_jsonl(out_dir / "train_log.jsonl", log_rows)
    info = _finish_training(cfg, result, t_cfg, out_dir)
    info["command"] = "train"
    return info


def cmd_finetune(args) -> dict:
    cfg = _load(args)
    records = _records(cfg)
    t_cfg = train_config_from(cfg)
    if t_cfg.mode != "paired":
        raise UsageError("finetune requires train.mode == 'paired' in the config")
    vocab = build_vocab(records)
    params, ckpt_vocab, manifest = load_checkpoint(
        require_path(cfg, "checkpoint"), expected_fingerprint=vocab.fingerprint
    )
    feats, ids = load_unit_embeddings(require_path(cfg, "vision_features"))
    by_id: dict[str, list[np.ndarray]] = {}
    for row, item_id in zip(feats, ids):
        by_id.setdefault(item_id, []).append(row)
    pairs = []
    for i, rec in enumerate(records):
        rows = by_id.get(str(i))
        if rows is None:
            raise DataError(f"no vision feature rows for record {i}")
        pairs.append((rows, rec))
    bank_feats, surfaces = load_unit_embeddings(require_path(cfg, "bank"))
    bank = ConceptBank(surfaces, bank_feats)
    languages = manifest["languages"]
    log_rows: list[dict] = []
    params, history = fine_tune_paired(
        pairs, bank, ckpt_vocab, languages, params, t_cfg,
        log_fn=log_rows.append,
    )
    out_dir = Path(require_path(cfg, "out_dir"))
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = out_dir / "checkpoint"
    save_checkpoint(ckpt, params, ckpt_vocab, languages, asdict(t_cfg),
                    step_count=manifest["step_count"] + len(history),
                    seed=t_cfg.seed)
    write_jsonl(out_dir / "finetune_log.jsonl", log_rows)
    return {"command": "finetune", "checkpoint": str(ckpt),
            "hash": checkpoint_fingerprint(ckpt), "steps": len(history)}


def cmd_caption(args) -> dict:
    cfg = _load(args)
    params, vocab, manifest = load_checkpoint(require_path(cfg, "checkpoint"))
    bank_feats, surfaces = load_unit_embeddings(require_path(cfg, "bank"))
    bank = ConceptBank(surfaces, bank_feats)
    feats, ids = load_unit_embeddings(require_path(cfg, "vision_features"))
    groups: list[tuple[str, list[np.ndarray]]] = []
    for row, item_id in zip(feats, ids):
        if groups and groups[-1][0] == item_id:
            groups[-1][1].append(row)
        else:
            groups.append((item_id, [row]))
    t_cfg = train_config_from(cfg)
    lang = cfg["languages"][0]
    rows = caption_from_features(
        groups, params, bank, vocab, manifest["languages"], lang,
        t_cfg, cfg["decode"],
    )
    out = require_path(cfg, "captions")
    write_jsonl(out, rows)
    return {"command": "caption", "n_items": len(rows), "path": out}


def cmd_evaluate(args) -> dict:
    cfg = _load(args)
    corpus = read_eval_corpus(require_path(cfg, "eval_data"))
    report = evaluate(corpus)
    out = cfg["paths"].get("report")
    if out:
        Path(out).write_text(json.dumps(report, sort_keys=True, indent=1),
                             encoding="utf-8")
        report["path"] = out
    report["command"] = "evaluate"
    return report


def cmd_ablate(args) -> dict:
    cfg = _load(args)
    corpus_path = cfg["paths"].get("corpus")
    if corpus_path:
        records = load_corpus(corpus_path)
    else:
        records = toy_corpus(160, seed=cfg["train"]["seed"])
    table = run_ablation(
        records, cfg["ablation"]["configs"], gap_spec_from(cfg),
        cfg["ablation"]["seeds"], cfg,
    )
    out = cfg["paths"].get("report")
    if out:
        Path(out).write_text(json.dumps(table, sort_keys=True, indent=1),
                             encoding="utf-8")
    return {"command": "ablate", "summary": table["summary"],
            **({"path": out} if out else {})}


def cmd_gap_report(args) -> dict:
    cfg = _load(args)
    text, tids = load_unit_embeddings(require_path(cfg, "embeddings"))
    vision, vids = load_unit_embeddings(require_path(cfg, "vision_features"))
    vpos = {v: i for i, v in enumerate(vids)}
    pairing = [(i, vpos[t]) for i, t in enumerate(tids) if t in vpos]
    if not pairing:
        raise DataError("no shared ids between text and vision features")
    rep = gap_report(list(text), list(vision), pairing)
    return {
        "command": "gap-report",
        "centroid_distance": rep.centroid_distance,
        "mean_paired_cosine": rep.mean_paired_cosine,
        "n_pairs": len(pairing),
    }


def cmd_init_config(args) -> dict:
    cfg = default_run_config()
    out = Path(args.out or "run.json")
    out.write_text(json.dumps(cfg, indent=1, sort_keys=True), encoding="utf-8")
    return {"command": "init-config", "path": str(out)}


COMMANDS = {
    "extract-concepts": cmd_extract_concepts,
    "embed": cmd_embed,
    "build-candidates": cmd_build_candidates,
    "train": cmd_train,
    "finetune": cmd_finetune,
    "caption": cmd_caption,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "gap-report": cmd_gap_report,
    "init-config": cmd_init_config,
}


def build_parser() -> _Parser:
    parser = _Parser(prog="conceptcap",
                     description="Concept-prompted zero-shot captioning")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, add_help=True)
        if name == "init-config":
            p.add_argument("--out", default=None)
            continue
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        if name == "embed":
            p.add_argument("--what", choices=("corpus", "concepts"),
                           default="corpus")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        result = COMMANDS[args.command](args)
        _emit(result)
        return 0
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except (ConceptCapError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
