"""Unit-sphere feature operations.

Features live on the L2 unit sphere; a "unit vector" here is a plain 1-D
float64 numpy array with norm 1 within 1e-6. Retrieval is exact
brute-force dot product: banks stay small (about a thousand entries), so
nothing fancier pays for itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BoundError, DegenerateVectorError, DimensionError, EmptyInputError

UNIT_TOL = 1e-6
_MIN_NORM = 1e-12


def normalize(raw) -> np.ndarray:
    """Scale `raw` to unit L2 norm; reject near-zero vectors."""
    v = np.asarray(raw, dtype=np.float64)
    n = float(np.linalg.norm(v))
    if n <= _MIN_NORM:
        raise DegenerateVectorError(f"cannot normalize vector with norm {n:.3e}")
    return v / n


def is_unit(v, tol: float = UNIT_TOL) -> bool:
    return abs(float(np.linalg.norm(np.asarray(v, dtype=np.float64))) - 1.0) <= tol


@dataclass
class ConceptBank:
    """Embedded concept phrases, ordered by extraction rank."""

    surfaces: list[str]
    features: np.ndarray  # [M x d], rows unit-norm

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or len(self.surfaces) != self.features.shape[0]:
            raise DimensionError(
                f"{len(self.surfaces)} surfaces vs features {list(self.features.shape)}"
            )
        if len(set(self.surfaces)) != len(self.surfaces):
            raise DimensionError("concept surfaces must be unique")

    def __len__(self) -> int:
        return len(self.surfaces)

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass
class PromptSet:
    """Retrieved concept rows plus provenance, similarity-descending."""

    features: np.ndarray  # [K x d]
    indices: list[int]
    similarities: list[float]
    surfaces: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.indices)


def empty_prompts(dim: int) -> PromptSet:
    """The K = 0 prompt set used by prompt-free ablations."""
    return PromptSet(np.zeros((0, dim)), [], [], [])


def retrieve_prompts(query: np.ndarray, bank: ConceptBank, k: int) -> PromptSet:
    """Top-k bank entries by dot product, ties broken by lower index."""
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (bank.dim,):
        raise DimensionError(f"query dim {list(query.shape)} vs bank dim {bank.dim}")
    if k < 0 or k > len(bank):
        raise BoundError(f"k={k} outside [0, {len(bank)}]")
    if k == 0:
        return empty_prompts(bank.dim)
    sims = bank.features @ query
    # stable sort on -sims keeps lower bank index first among exact ties
    order = np.argsort(-sims, kind="stable")[:k]
    return PromptSet(
        features=bank.features[order].copy(),
        indices=[int(i) for i in order],
        similarities=[float(np.clip(sims[i], -1.0, 1.0)) for i in order],
        surfaces=[bank.surfaces[i] for i in order],
    )


def pool_frames(frames: list[np.ndarray]) -> np.ndarray:
    """Normalized mean of frame features (single image: one frame)."""
    if not frames:
        raise EmptyInputError("pool_frames of an empty list")
    mat = np.asarray(frames, dtype=np.float64)
    if mat.ndim != 2:
        raise DimensionError("frames must share one dimension")
    return normalize(mat.mean(axis=0))


@dataclass
class GapReport:
    centroid_distance: float
    mean_paired_cosine: float


def gap_report(
    text_feats: list[np.ndarray],
    vision_feats: list[np.ndarray],
    pairing: list[tuple[int, int]],
) -> GapReport:
    """Numeric modality-gap diagnostics between two unit-vector sets."""
    if not text_feats or not vision_feats:
        raise EmptyInputError("gap_report needs non-empty feature sets")
    t = np.asarray(text_feats, dtype=np.float64)
    v = np.asarray(vision_feats, dtype=np.float64)
    if t.shape[1] != v.shape[1]:
        raise DimensionError(f"dims {t.shape[1]} vs {v.shape[1]}")
    for ti, vi in pairing:
        if not (0 <= ti < len(t) and 0 <= vi < len(v)):
            raise BoundError(f"pair ({ti}, {vi}) out of range")
    centroid = float(np.linalg.norm(t.mean(axis=0) - v.mean(axis=0)))
    cosines = [float(t[ti] @ v[vi]) for ti, vi in pairing]
    mean_cos = float(np.mean(cosines)) if cosines else float("nan")
    return GapReport(centroid_distance=centroid, mean_paired_cosine=mean_cos)
