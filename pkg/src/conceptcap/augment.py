"""Input augmentation (neighbor candidate sets) and feature augmentation
(Gaussian perturbation on the unit sphere).

During training the two compose as: sample a candidate sentence, take
its cached feature, noise it, renormalize. The noise parameter is the
per-dimension variance, so the draw uses std = sqrt(epsilon).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embedding import normalize
from .errors import BoundError, DataError, DegenerateVectorError


@dataclass
class CandidateSet:
    """Anchor plus its N - 1 nearest corpus neighbors (anchor first)."""

    anchor_index: int
    member_indices: list[int]

    def __post_init__(self):
        if not self.member_indices or self.member_indices[0] != self.anchor_index:
            raise DataError("candidate set must list its anchor first")
        if len(set(self.member_indices)) != len(self.member_indices):
            raise DataError("candidate set members must be distinct")


@dataclass
class NoiseConfig:
    """Gaussian feature-noise parameter (variance) and its seed."""

    epsilon: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.epsilon < 0:
            raise DataError(f"epsilon must be non-negative, got {self.epsilon}")


def build_candidate_sets(features: np.ndarray, n: int) -> list[CandidateSet]:
    """For each anchor, the n - 1 other rows with highest cosine.

    `features` is an [M x d] matrix of unit rows. Ties break toward the
    lower index; exact duplicates are legal members.
    """
    feats = np.asarray(features, dtype=np.float64)
    m = feats.shape[0]
    if n < 1 or n > m:
        raise BoundError(f"n={n} outside [1, {m}]")
    sims = feats @ feats.T
    sets = []
    for i in range(m):
        if n == 1:
            sets.append(CandidateSet(i, [i]))
            continue
        row = sims[i].copy()
        row[i] = -np.inf  # anchor is prepended, not ranked
        order = np.argsort(-row, kind="stable")[: n - 1]
        sets.append(CandidateSet(i, [i] + [int(j) for j in order]))
    return sets


def build_candidate_sets_grouped(
    features: np.ndarray, groups: list, n: int
) -> list[CandidateSet]:
    """Candidate sets restricted to same-group (same-language) members.

    Indices in the result are global row indices. Every group must have
    at least n members.
    """
    feats = np.asarray(features, dtype=np.float64)
    out: list[CandidateSet | None] = [None] * feats.shape[0]
    for group in sorted(set(groups), key=str):
        idx = [i for i, g in enumerate(groups) if g == group]
        for local in build_candidate_sets(feats[idx], n):
            members = [idx[j] for j in local.member_indices]
            out[members[0]] = CandidateSet(members[0], members)
    return [s for s in out if s is not None]


def input_augment(cand: CandidateSet, rng: np.random.Generator) -> int:
    """Uniform draw over the candidate set (1/N chance of the anchor)."""
    pick = int(rng.integers(0, len(cand.member_indices)))
    return cand.member_indices[pick]


def feature_augment(
    feat: np.ndarray, cfg: NoiseConfig, rng: np.random.Generator
) -> np.ndarray:
    """normalize(feat + n) with n ~ Normal(0, sqrt(epsilon)) per dim.

    epsilon == 0 returns the input unchanged (bit-exact identity). A
    degenerate sum retries once with a fresh draw, then fails.
    """
    v = np.asarray(feat, dtype=np.float64)
    if cfg.epsilon == 0.0:
        return v
    std = math.sqrt(cfg.epsilon)
    for attempt in range(2):
        noised = v + rng.normal(0.0, std, size=v.shape)
        try:
            return normalize(noised)
        except DegenerateVectorError:
            if attempt == 1:
                raise
    raise AssertionError("unreachable")


def save_candidate_sets(path: str | Path, sets: list[CandidateSet]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in sets:
            fh.write(
                json.dumps({"anchor": s.anchor_index, "members": s.member_indices})
                + "\n"
            )


def load_candidate_sets(path: str | Path) -> list[CandidateSet]:
    sets = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                sets.append(CandidateSet(int(obj["anchor"]), [int(j) for j in obj["members"]]))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: bad candidate line ({exc})") from exc
    if not sets:
        raise DataError(f"{path}: no candidate sets")
    return sets
