"""Corpus-level caption metrics: BLEU@4, ROUGE-L, CIDEr-D.

Conventions follow the usual COCO evaluation-server behavior: BLEU pools
clipped counts over the corpus with a closest-reference brevity penalty
and no smoothing; CIDEr is the ~D variant (tf-idf over 1..4-grams,
clipped counts, Gaussian length penalty with sigma 6, scaled by 10).
"""

from __future__ import annotations

import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass

import numpy as np

from .errors import DataError, EmptyInputError

log = logging.getLogger(__name__)

CIDER_N = 4
CIDER_SIGMA = 6.0
ROUGE_BETA = 1.2

# crude PTB-ish cleanup for evaluation text: lowercase, strip punctuation
_PUNCT = set("!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~")


def eval_tokenize(text: str) -> list[str]:
    """Lowercase, strip punctuation characters, split on whitespace."""
    out = []
    for tok in text.lower().split():
        cleaned = "".join(ch for ch in tok if ch not in _PUNCT)
        if cleaned:
            out.append(cleaned)
    return out


@dataclass
class EvalItem:
    id: str
    candidate: list[str]
    references: list[list[str]]


@dataclass
class EvalCorpus:
    items: list[EvalItem]

    def __post_init__(self):
        if not self.items:
            raise EmptyInputError("empty evaluation corpus")
        ids = [it.id for it in self.items]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate item ids in evaluation corpus")
        for it in self.items:
            if not it.references:
                raise DataError(f"item '{it.id}' has no references")

    def __len__(self) -> int:
        return len(self.items)


def ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def clipped_matches(cand: list[str], refs: list[list[str]], n: int) -> int:
    """Candidate n-gram count clipped by the per-reference maximum."""
    counts = ngram_counts(cand, n)
    maxref: Counter = Counter()
    for ref in refs:
        for gram, c in ngram_counts(ref, n).items():
            maxref[gram] = max(maxref[gram], c)
    return sum(min(c, maxref[g]) for g, c in counts.items())


def bleu4(corpus: EvalCorpus) -> float:
    """Corpus BLEU with uniform weights over 1..4-grams, no smoothing."""
    guess = [0] * 4
    correct = [0] * 4
    cand_len = 0
    ref_len = 0
    for item in corpus.items:
        c = len(item.candidate)
        cand_len += c
        # closest reference length; ties -> the shorter one
        ref_len += min((abs(len(r) - c), len(r)) for r in item.references)[1]
        for n in range(1, 5):
            guess[n - 1] += max(0, c - n + 1)
            correct[n - 1] += clipped_matches(item.candidate, item.references, n)
    if cand_len == 0:
        return 0.0
    if any(g == 0 or c == 0 for g, c in zip(guess, correct)):
        return 0.0
    log_p = sum(math.log(c / g) for c, g in zip(correct, guess)) / 4.0
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * math.exp(log_p)


def _lcs_len(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(corpus: EvalCorpus) -> float:
    """Mean over items of the best per-reference LCS F-measure."""
    beta2 = ROUGE_BETA**2
    scores = []
    for item in corpus.items:
        best = 0.0
        for ref in item.references:
            lcs = _lcs_len(item.candidate, ref)
            if lcs == 0:
                continue
            p = lcs / len(item.candidate)
            r = lcs / len(ref)
            best = max(best, (1 + beta2) * p * r / (r + beta2 * p))
        scores.append(best)
    return float(np.mean(scores))


def cider(corpus: EvalCorpus) -> float:
    """CIDEr-D: clipped tf-idf cosine per n, length-penalized, x10."""
    n_items = len(corpus)
    if n_items < 2:
        log.warning("cider over %d item(s): document frequencies are degenerate",
                    n_items)
    # document frequency: one count per item whose references hold the gram
    df: dict[tuple, int] = defaultdict(int)
    for item in corpus.items:
        seen = set()
        for ref in item.references:
            for n in range(1, CIDER_N + 1):
                seen.update(ngram_counts(ref, n).keys())
        for gram in seen:
            df[gram] += 1
    log_n = math.log(float(n_items))

    def tfidf(tokens: list[str]):
        vecs = []
        norms = []
        for n in range(1, CIDER_N + 1):
            vec = {
                gram: count * (log_n - math.log(max(1.0, df[gram])))
                for gram, count in ngram_counts(tokens, n).items()
            }
            vecs.append(vec)
            norms.append(math.sqrt(sum(w * w for w in vec.values())))
        return vecs, norms

    total = 0.0
    for item in corpus.items:
        cvec, cnorm = tfidf(item.candidate)
        per_n = np.zeros(CIDER_N)
        for ref in item.references:
            rvec, rnorm = tfidf(ref)
            delta = float(len(item.candidate) - len(ref))
            penalty = math.exp(-(delta**2) / (2.0 * CIDER_SIGMA**2))
            for n in range(CIDER_N):
                num = sum(
                    min(w, rvec[n].get(gram, 0.0)) * rvec[n].get(gram, 0.0)
                    for gram, w in cvec[n].items()
                )
                if cnorm[n] != 0.0 and rnorm[n] != 0.0:
                    num /= cnorm[n] * rnorm[n]
                else:
                    num = 0.0
                per_n[n] += num * penalty
        total += 10.0 * float(per_n.mean()) / len(item.references)
    return total / n_items


def evaluate(corpus: EvalCorpus) -> dict:
    """All three metrics plus the item count, as a report dict."""
    return {
        "bleu4": bleu4(corpus),
        "rouge_l": rouge_l(corpus),
        "cider": cider(corpus),
        "n_items": len(corpus),
    }
