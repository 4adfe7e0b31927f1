"""Run configuration: one JSON document, strict keys, paper defaults."""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .decoder import PRESETS, DecoderConfig
from .errors import DataError, UsageError
from .testbed import GapSpec
from .train import TrainConfig


def default_run_config() -> dict:
    """Fresh config with the published training defaults filled in."""
    return {
        "languages": ["en"],
        "embedder": {"dim": 64, "seed": 0},
        "model": {
            "preset": "test",
            "max_len": 64,
            "dropout": 0.0,
        },
        "train": {
            "lr": 1e-4,
            "warmup_fraction": 0.10,
            "epochs": 10,
            "batch_size": 32,
            "weight_decay": 0.01,
            "label_smoothing": 0.1,
            "k_prompts": 16,
            "n_candidates": 5,
            "epsilon": 0.01,
            "seed": 0,
            "mode": "text_only",
        },
        "concepts": {
            "cap": 1000,
            "max_len": 3,
            "file": None,
            "stopwords": None,
        },
        "decode": {
            "beam_size": 3,
            "max_len": 30,
            "length_penalty": 0.0,
            "greedy": False,
        },
        "gap": {
            "offset_scale": 0.5,
            "rotation_seed": 0,
            "noise_scale": 0.05,
        },
        "ablation": {
            "configs": [
                {"use_cp": False, "use_ia": False, "use_fa": False},
                {"use_cp": False, "use_ia": True, "use_fa": True},
                {"use_cp": True, "use_ia": True, "use_fa": True},
            ],
            "seeds": [0, 1, 2],
            "eval_fraction": 0.25,
        },
        "paths": {
            "corpus": None,
            "out_dir": None,
            "concepts": None,
            "embeddings": None,
            "bank": None,
            "candidates": None,
            "checkpoint": None,
            "vision_features": None,
            "captions": None,
            "eval_data": None,
            "report": None,
        },
    }


# model keys that may override the preset directly
_MODEL_OVERRIDES = ("d_model", "n_layers", "n_heads", "d_ff")


def _merge_strict(defaults: dict, user: dict, crumb: str) -> dict:
    out = copy.deepcopy(defaults)
    for key, value in user.items():
        here = f"{crumb}.{key}" if crumb else key
        if crumb == "model" and key in _MODEL_OVERRIDES:
            out[key] = value
            continue
        if key not in defaults:
            raise DataError(f"unknown config key '{here}'")
        if isinstance(defaults[key], dict) and isinstance(value, dict):
            out[key] = _merge_strict(defaults[key], value, here)
        else:
            out[key] = value
    return out


def validate_run_config(user: dict) -> dict:
    """Merge a user dict over the defaults; unknown keys are an error."""
    if not isinstance(user, dict):
        raise DataError("config root must be a JSON object")
    cfg = _merge_strict(default_run_config(), user, "")
    if cfg["model"]["preset"] not in PRESETS:
        raise DataError(
            f"unknown model preset '{cfg['model']['preset']}'"
            f" (choose from {sorted(PRESETS)})"
        )
    return cfg


def load_run_config(path: str | Path) -> dict:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise UsageError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc
    return validate_run_config(raw)


def train_config_from(cfg: dict) -> TrainConfig:
    return TrainConfig(**cfg["train"])


def gap_spec_from(cfg: dict) -> GapSpec:
    return GapSpec(**cfg["gap"])


def decoder_config_from(cfg: dict, vocab_size: int, n_languages: int) -> DecoderConfig:
    model = cfg["model"]
    sizes = dict(PRESETS[model["preset"]])
    for key in _MODEL_OVERRIDES:
        if key in model:
            sizes[key] = model[key]
    return DecoderConfig(
        vocab_size=vocab_size,
        max_len=model["max_len"],
        n_languages=n_languages,
        d_clip=cfg["embedder"]["dim"],
        dropout=model["dropout"],
        **sizes,
    )


def require_path(cfg: dict, name: str) -> str:
    value = cfg["paths"].get(name)
    if not value:
        raise UsageError(f"config paths.{name} is required for this command")
    return value
