"""Corpus records, tokenization, and the corpus-built vocabulary.

Corpora are JSON Lines, one object per line:
    {"source": "...", "target": "..." (optional), "lang": "en"}
Text is tokenized on whitespace after NFC normalization; languages
without whitespace segmentation must arrive pre-segmented.
"""

from __future__ import annotations

import hashlib
import json
import unicodedata
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .errors import DataError, VocabularyError

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIAL_TOKENS = ["<pad>", "<bos>", "<eos>", "<unk>"]


def tokenize(text: str) -> list[str]:
    """Whitespace tokens of the NFC-normalized string."""
    return unicodedata.normalize("NFC", text).split()


@dataclass
class CaptionRecord:
    """One corpus entry: source tokens, optional target tokens, language."""

    source: list[str]
    target: list[str] | None
    lang: str

    def __post_init__(self):
        if not self.source:
            raise DataError("caption record with empty source")

    @property
    def output_tokens(self) -> list[str]:
        """What the decoder is trained to produce: T if present, else S."""
        return self.target if self.target is not None else self.source


def load_corpus(path: str | Path) -> list[CaptionRecord]:
    """Read a JSONL corpus file into records."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: bad JSON ({exc})") from exc
            if not isinstance(obj, dict) or "source" not in obj or "lang" not in obj:
                raise DataError(f"{path}:{lineno}: need 'source' and 'lang' keys")
            unknown = set(obj) - {"source", "target", "lang"}
            if unknown:
                raise DataError(f"{path}:{lineno}: unknown keys {sorted(unknown)}")
            source = tokenize(obj["source"])
            if not source:
                raise DataError(f"{path}:{lineno}: empty source text")
            target = tokenize(obj["target"]) if obj.get("target") is not None else None
            records.append(CaptionRecord(source, target, str(obj["lang"])))
    if not records:
        raise DataError(f"{path}: empty corpus")
    return records


def save_corpus(path: str | Path, records: list[CaptionRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            obj = {"source": " ".join(rec.source), "lang": rec.lang}
            if rec.target is not None:
                obj["target"] = " ".join(rec.target)
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


class Vocabulary:
    """Token <-> id map with fixed special ids 0..3 and a fingerprint."""

    def __init__(self, tokens: list[str]):
        if tokens[: len(SPECIAL_TOKENS)] != SPECIAL_TOKENS:
            raise VocabularyError("vocabulary must start with the special tokens")
        if len(set(tokens)) != len(tokens):
            raise VocabularyError("duplicate token in vocabulary")
        self.id_to_token = list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(tokens)}
        self.fingerprint = hashlib.sha256(
            "\n".join(tokens).encode("utf-8")
        ).hexdigest()

    def __len__(self) -> int:
        return len(self.id_to_token)

    def encode(self, tokens: list[str]) -> list[int]:
        return [self.token_to_id.get(t, UNK) for t in tokens]

    def decode(self, ids: list[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]


def build_vocab(
    records: list[CaptionRecord], min_freq: int = 1, max_size: int = 30000
) -> Vocabulary:
    """Frequency-ranked whitespace vocabulary over sources and targets.

    Most frequent first, ties broken lexicographically, capped at
    `max_size` non-special entries; specials occupy ids 0..3.
    """
    counts: Counter[str] = Counter()
    for rec in records:
        counts.update(rec.source)
        if rec.target is not None:
            counts.update(rec.target)
    ranked = sorted(
        (t for t, c in counts.items() if c >= min_freq),
        key=lambda t: (-counts[t], t),
    )[:max_size]
    if not ranked:
        raise VocabularyError(f"no token reaches min_freq={min_freq}")
    return Vocabulary(SPECIAL_TOKENS + ranked)
