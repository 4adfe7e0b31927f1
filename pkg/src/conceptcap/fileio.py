"""Binary embedding files, checkpoints, and JSONL record formats.

MCE1 embedding file, little-endian:
    magic "MCE1" | u32 count | u32 dim | count*dim float32 row-major
    | u64 trailer byte length | UTF-8 JSON array of per-row string ids

Checkpoint weight file reuses the same flat-floats-plus-JSON-trailer
layout at float64 ("MCW1"); the trailer names each tensor with its
shape and flat offset.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .corpus import Vocabulary
from .decoder import DecoderConfig, DecoderParameters
from .errors import DataError
from .metrics import EvalCorpus, EvalItem, eval_tokenize

log = logging.getLogger(__name__)

MCE_MAGIC = b"MCE1"
WEIGHTS_MAGIC = b"MCW1"
NORM_WARN_TOL = 1e-3


def write_embeddings(path: str | Path, matrix, ids: list[str]) -> None:
    """Write rows (cast to float32) and their string ids."""
    mat = np.ascontiguousarray(np.asarray(matrix), dtype=np.float32)
    if mat.ndim != 2:
        raise DataError(f"embedding matrix must be 2-D, got {mat.shape}")
    if len(ids) != mat.shape[0]:
        raise DataError(f"{len(ids)} ids for {mat.shape[0]} rows")
    trailer = json.dumps(list(ids), ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MCE_MAGIC)
        fh.write(struct.pack("<II", mat.shape[0], mat.shape[1]))
        fh.write(mat.tobytes(order="C"))
        fh.write(struct.pack("<Q", len(trailer)))
        fh.write(trailer)


def read_embeddings(path: str | Path) -> tuple[np.ndarray, list[str]]:
    """Exact float32 rows and ids, as stored."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MCE_MAGIC:
        raise DataError(f"{path}: bad magic {blob[:4]!r}")
    count, dim = struct.unpack_from("<II", blob, 4)
    body = 12
    need = count * dim * 4
    mat = np.frombuffer(blob, dtype="<f4", count=count * dim, offset=body)
    mat = mat.reshape(count, dim).copy()
    (tlen,) = struct.unpack_from("<Q", blob, body + need)
    raw = blob[body + need + 8 : body + need + 8 + tlen]
    try:
        ids = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: bad id trailer ({exc})") from exc
    if not isinstance(ids, list) or len(ids) != count:
        raise DataError(f"{path}: trailer ids do not match row count")
    return mat, [str(i) for i in ids]


def load_unit_embeddings(path: str | Path) -> tuple[np.ndarray, list[str]]:
    """Read and L2-normalize rows, warning when stored norms stray."""
    mat, ids = read_embeddings(path)
    mat = mat.astype(np.float64)
    norms = np.linalg.norm(mat, axis=1)
    if (norms <= 1e-12).any():
        raise DataError(f"{path}: zero-norm embedding row")
    off = np.abs(norms - 1.0).max() if len(norms) else 0.0
    if off > NORM_WARN_TOL:
        log.warning("%s: row norms deviate from 1 by up to %.3g; normalizing",
                    path, off)
    return mat / norms[:, None], ids


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def _write_weights(path: Path, params: DecoderParameters) -> None:
    names = list(params.tensors)
    trailer = []
    offset = 0
    chunks = []
    for name in names:
        arr = np.ascontiguousarray(params[name].values, dtype=np.float64)
        trailer.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
        chunks.append(arr.tobytes(order="C"))
    tbytes = json.dumps(trailer).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<Q", offset))
        for c in chunks:
            fh.write(c)
        fh.write(struct.pack("<Q", len(tbytes)))
        fh.write(tbytes)


def _read_weights(path: Path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != WEIGHTS_MAGIC:
        raise DataError(f"{path}: bad weights magic {blob[:4]!r}")
    (n_floats,) = struct.unpack_from("<Q", blob, 4)
    body = 12
    flat = np.frombuffer(blob, dtype="<f8", count=n_floats, offset=body)
    (tlen,) = struct.unpack_from("<Q", blob, body + n_floats * 8)
    trailer = json.loads(blob[body + n_floats * 8 + 8 :][:tlen].decode("utf-8"))
    out = {}
    for entry in trailer:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        at = entry["offset"]
        out[entry["name"]] = flat[at : at + size].reshape(shape).copy()
    return out


def save_checkpoint(
    ckpt_dir: str | Path,
    params: DecoderParameters,
    vocab: Vocabulary,
    languages: list[str],
    train_config: dict,
    step_count: int,
    seed: int,
) -> None:
    """Write manifest.json plus the flat weight file."""
    ckpt_dir = Path(ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": "conceptcap-checkpoint-v1",
        "decoder_config": asdict(params.config),
        "train_config": train_config,
        "languages": list(languages),
        "vocab_fingerprint": vocab.fingerprint,
        "vocab_tokens": vocab.id_to_token,
        "step_count": int(step_count),
        "seed": int(seed),
    }
    (ckpt_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=1, sort_keys=True, ensure_ascii=False),
        encoding="utf-8",
    )
    _write_weights(ckpt_dir / "weights.bin", params)


def load_checkpoint(
    ckpt_dir: str | Path, expected_fingerprint: str | None = None
) -> tuple[DecoderParameters, Vocabulary, dict]:
    """Rebuild params and vocab; optionally enforce the vocab fingerprint."""
    ckpt_dir = Path(ckpt_dir)
    try:
        manifest = json.loads((ckpt_dir / "manifest.json").read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise DataError(f"{ckpt_dir}: not a checkpoint directory") from exc
    vocab = Vocabulary(manifest["vocab_tokens"])
    if vocab.fingerprint != manifest["vocab_fingerprint"]:
        raise DataError(f"{ckpt_dir}: manifest fingerprint does not match tokens")
    if expected_fingerprint is not None and expected_fingerprint != vocab.fingerprint:
        raise DataError(
            f"{ckpt_dir}: checkpoint vocabulary {vocab.fingerprint[:12]} does not "
            f"match corpus vocabulary {expected_fingerprint[:12]}"
        )
    cfg = DecoderConfig(**manifest["decoder_config"])
    arrays = _read_weights(ckpt_dir / "weights.bin")
    tensors = {}
    for name, arr in arrays.items():
        tensors[name] = ad.parameter(arr)
    params = DecoderParameters(cfg, tensors)
    return params, vocab, manifest


def checkpoint_fingerprint(ckpt_dir: str | Path) -> str:
    """sha256 over manifest and weight bytes."""
    ckpt_dir = Path(ckpt_dir)
    h = hashlib.sha256()
    h.update((ckpt_dir / "manifest.json").read_bytes())
    h.update((ckpt_dir / "weights.bin").read_bytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# JSONL record formats
# ---------------------------------------------------------------------------

def write_jsonl(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def read_jsonl(path: str | Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: bad JSON ({exc})") from exc
    return rows


def read_eval_corpus(path: str | Path) -> EvalCorpus:
    """JSONL of {"id", "candidate", "references"} into a tokenized corpus."""
    items = []
    for row in read_jsonl(path):
        try:
            items.append(
                EvalItem(
                    str(row["id"]),
                    eval_tokenize(row["candidate"]),
                    [eval_tokenize(r) for r in row["references"]],
                )
            )
        except (KeyError, TypeError) as exc:
            raise DataError(f"{path}: bad evaluation row ({exc})") from exc
    return EvalCorpus(items)
