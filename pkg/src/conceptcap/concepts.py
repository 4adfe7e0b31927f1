"""Concept vocabulary extraction and embedding.

Noun-phrase chunking is approximated by stopword-bounded token runs: a
candidate is a maximal contiguous run of non-stopword, non-punctuation
tokens with length <= max_len, lowercased. Externally produced concept
lists (one phrase per line) can be ingested instead for runs where a
real chunker is available.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import CaptionRecord
from .embedding import ConceptBank, normalize
from .errors import DataError, EmptyInputError

# Minimal function-word lists; enough to bound noun-ish runs in the
# shipped toy corpora. Real runs should pass their own list or an
# external concepts file.
DEFAULT_STOPWORDS: dict[str, frozenset[str]] = {
    "en": frozenset(
        """a an the and or but if then than so of to in on at by for with from
        as is are was were be been being am do does did has have had he she it
        they them his her its their this that these those there here not no
        very too also just near under over into onto while during after before
        up down out off about against between through""".split()
    ),
    "de": frozenset(
        """der die das ein eine und oder aber zu in auf an bei mit von aus als
        ist sind war waren sein hat haben er sie es ihr sein diese dieser
        nicht kein sehr auch nur nach vor unter""".split()
    ),
    "fr": frozenset(
        """le la les un une des et ou mais de du au aux en dans sur par pour
        avec est sont il elle ils elles ce cette ces ne pas tres aussi apres
        avant sous""".split()
    ),
}


def stopwords_for(lang: str) -> frozenset[str]:
    return DEFAULT_STOPWORDS.get(lang, frozenset())


def _is_punct_token(tok: str) -> bool:
    return all(not ch.isalnum() for ch in tok)


@dataclass
class ConceptVocabulary:
    """Phrases ranked by corpus frequency (desc, ties lexicographic)."""

    entries: list[tuple[str, int]]

    def __post_init__(self):
        phrases = [p for p, _ in self.entries]
        if len(set(phrases)) != len(phrases):
            raise DataError("duplicate phrase in concept vocabulary")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def phrases(self) -> list[str]:
        return [p for p, _ in self.entries]


def candidate_runs(
    tokens: list[str], stopwords: frozenset[str] | set[str], max_len: int
) -> list[str]:
    """Maximal stopword/punctuation-bounded runs of length <= max_len."""
    lowered = [t.lower() for t in tokens]
    runs: list[str] = []
    cur: list[str] = []
    for tok in lowered + [""]:  # sentinel flushes the last run
        if tok and tok not in stopwords and not _is_punct_token(tok):
            cur.append(tok)
        else:
            if cur and len(cur) <= max_len:
                runs.append(" ".join(cur))
            cur = []
    return runs


def extract_concepts(
    corpus: list[CaptionRecord],
    cap: int = 1000,
    stopwords: frozenset[str] | set[str] | None = None,
    max_len: int = 3,
) -> ConceptVocabulary:
    """Rank candidate phrases by occurrence count and keep the top `cap`."""
    if not corpus:
        raise EmptyInputError("cannot extract concepts from an empty corpus")
    if stopwords is None:
        langs = {rec.lang for rec in corpus}
        stopwords = frozenset().union(*(stopwords_for(l) for l in langs))
    counts: Counter[str] = Counter()
    for rec in corpus:
        counts.update(candidate_runs(rec.source, stopwords, max_len))
    if not counts:
        raise EmptyInputError("no concept candidates found in the corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:cap]
    return ConceptVocabulary(ranked)


def read_concepts_file(path: str | Path, cap: int = 1000) -> ConceptVocabulary:
    """Ingest an externally produced concept list, one phrase per line.

    Ranks are taken from file order; frequencies are synthesized so the
    ordering invariant still holds.
    """
    phrases: list[str] = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            phrase = line.strip().lower()
            if phrase and phrase not in seen:
                phrases.append(phrase)
                seen.add(phrase)
    if not phrases:
        raise DataError(f"{path}: no phrases")
    phrases = phrases[:cap]
    n = len(phrases)
    return ConceptVocabulary([(p, n - i) for i, p in enumerate(phrases)])


def embed_concepts(vocab: ConceptVocabulary, embedder) -> ConceptBank:
    """Embed each phrase verbatim (identity template) into a bank.

    `embedder` maps a token list to a feature vector; rows are
    normalized and keep vocabulary order.
    """
    feats = []
    for phrase, _ in vocab.entries:
        try:
            feats.append(normalize(embedder(phrase.split())))
        except Exception as exc:
            raise DataError(f"embedding failed for concept '{phrase}': {exc}") from exc
    if not feats:
        raise EmptyInputError("empty concept vocabulary")
    return ConceptBank(vocab.phrases, np.asarray(feats))
