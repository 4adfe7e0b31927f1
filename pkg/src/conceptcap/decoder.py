"""The trainable language decoder.

A stack of pre-norm blocks, each with masked self-attention over the
prompt-prefixed token rows, cross-attention to a single projected
global-feature row, and a GELU feed-forward. Prompt rows come from one
affine+LN projector, the global feature from a second projector with
identical structure and its own weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .embedding import PromptSet
from .errors import CapacityError, DataError, DimensionError, NumericError

LN_EPS = 1e-5

# named model-size presets; "base" mirrors the usual Transformer-BASE
# shape, "test" is the desk-scale preset used across the test suite
PRESETS = {
    "test": dict(n_layers=2, d_model=64, n_heads=4, d_ff=128),
    "base": dict(n_layers=6, d_model=512, n_heads=8, d_ff=2048),
}


@dataclass(frozen=True)
class DecoderConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128
    max_len: int = 64
    n_languages: int = 1
    d_clip: int = 64
    dropout: float = 0.0

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise DataError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        if min(self.vocab_size, self.d_model, self.n_layers, self.n_heads,
               self.d_ff, self.max_len, self.n_languages, self.d_clip) < 1:
            raise DataError("all decoder dimensions must be positive")


@dataclass
class DecoderParameters:
    """All trainable weights, as an ordered name -> Tensor map."""

    config: DecoderConfig
    tensors: dict[str, Tensor]

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.values for k, t in self.tensors.items()}

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]


def _trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    x = rng.normal(0.0, std, size=shape)
    bad = np.abs(x) > 2.0 * std
    while bad.any():
        x[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(x) > 2.0 * std
    return x


def init_parameters(cfg: DecoderConfig, rng: np.random.Generator) -> DecoderParameters:
    """Truncated-normal(0.02) weights, zero biases, unit LN gains."""
    d, v = cfg.d_model, cfg.vocab_size
    t: dict[str, Tensor] = {}

    def w(name, shape):
        t[name] = ad.parameter(_trunc_normal(rng, shape))

    def zeros(name, shape):
        t[name] = ad.parameter(np.zeros(shape))

    def ln(prefix):
        t[f"{prefix}_g"] = ad.parameter(np.ones(d))
        t[f"{prefix}_b"] = ad.parameter(np.zeros(d))

    w("tok_emb", (v, d))
    w("pos_emb", (cfg.max_len, d))
    w("lang_emb", (cfg.n_languages, d))
    ln("emb_ln")
    for proj in ("prompt", "feat"):
        w(f"{proj}_w", (cfg.d_clip, d))
        zeros(f"{proj}_b", d)
        ln(f"{proj}_ln")
    for i in range(cfg.n_layers):
        ln(f"l{i}.ln1")
        for part in ("q", "k", "v", "o"):
            w(f"l{i}.self_{part}_w", (d, d))
            zeros(f"l{i}.self_{part}_b", d)
        ln(f"l{i}.ln2")
        for part in ("q", "k", "v", "o"):
            w(f"l{i}.cross_{part}_w", (d, d))
            zeros(f"l{i}.cross_{part}_b", d)
        ln(f"l{i}.ln3")
        w(f"l{i}.ffn1_w", (d, cfg.d_ff))
        zeros(f"l{i}.ffn1_b", cfg.d_ff)
        w(f"l{i}.ffn2_w", (cfg.d_ff, d))
        zeros(f"l{i}.ffn2_b", d)
    ln("final_ln")
    w("out_w", (d, v))
    zeros("out_b", v)
    return DecoderParameters(cfg, t)


@dataclass
class InputSequence:
    """Prompt rows then token rows, already projected to d_model."""

    embeddings: Tensor  # [(K + L) x d_model]
    prompt_len: int
    token_ids: list[int] = field(default_factory=list)
    lang: int = 0


def embed_sequence(token_ids: list[int], lang: int, params: DecoderParameters) -> Tensor:
    """Row i = LN(tok[id_i] + pos[i] + lang_emb[lang])."""
    cfg = params.config
    L = len(token_ids)
    if L > cfg.max_len:
        raise CapacityError(f"{L} tokens exceed max_len {cfg.max_len}")
    if not 0 <= lang < cfg.n_languages:
        raise DataError(f"language index {lang} outside [0, {cfg.n_languages})")
    tok = ad.embedding_lookup(params["tok_emb"], token_ids)
    pos = ad.embedding_lookup(params["pos_emb"], list(range(L)))
    lng = ad.embedding_lookup(params["lang_emb"], [lang] * L)
    summed = ad.add(ad.add(tok, pos), lng)
    return ad.layer_norm(summed, params["emb_ln_g"], params["emb_ln_b"], LN_EPS)


def _project(prefix: str, rows: np.ndarray, params: DecoderParameters) -> Tensor:
    affine = ad.add(
        ad.matmul(ad.constant(rows), params[f"{prefix}_w"]), params[f"{prefix}_b"]
    )
    return ad.layer_norm(
        affine, params[f"{prefix}_ln_g"], params[f"{prefix}_ln_b"], LN_EPS
    )


def build_input(
    prompts: PromptSet,
    token_ids: list[int],
    lang: int,
    params: DecoderParameters,
) -> InputSequence:
    """Concat(projected prompts, embedded tokens); prompt rows first."""
    cfg = params.config
    k = len(prompts)
    if k + len(token_ids) > cfg.max_len:
        raise CapacityError(
            f"K + L = {k + len(token_ids)} exceeds max_len {cfg.max_len}"
        )
    parts: list[Tensor] = []
    if k > 0:
        if prompts.features.shape[1] != cfg.d_clip:
            raise DimensionError(
                f"prompt dim {prompts.features.shape[1]} vs d_clip {cfg.d_clip}"
            )
        parts.append(_project("prompt", prompts.features, params))
    if token_ids:
        parts.append(embed_sequence(token_ids, lang, params))
    if not parts:
        raise CapacityError("input needs at least one prompt or token")
    rows = parts[0] if len(parts) == 1 else ad.concat_rows(parts)
    return InputSequence(rows, k, list(token_ids), lang)


def _heads(t: Tensor, n_heads: int) -> list[Tensor]:
    dh = t.shape[1] // n_heads
    return [ad.slice_cols(t, h * dh, (h + 1) * dh) for h in range(n_heads)]


def _multi_head(
    params: DecoderParameters,
    prefix: str,
    x_q: Tensor,
    x_kv: Tensor,
    mask: np.ndarray | None,
) -> Tensor:
    n_heads = params.config.n_heads
    q = ad.add(ad.matmul(x_q, params[f"{prefix}_q_w"]), params[f"{prefix}_q_b"])
    k = ad.add(ad.matmul(x_kv, params[f"{prefix}_k_w"]), params[f"{prefix}_k_b"])
    v = ad.add(ad.matmul(x_kv, params[f"{prefix}_v_w"]), params[f"{prefix}_v_b"])
    per_head = [
        ad.attention(qh, kh, vh, mask)
        for qh, kh, vh in zip(_heads(q, n_heads), _heads(k, n_heads), _heads(v, n_heads))
    ]
    cat = per_head[0] if n_heads == 1 else ad.concat_cols(per_head)
    return ad.add(ad.matmul(cat, params[f"{prefix}_o_w"]), params[f"{prefix}_o_b"])


def decode_logits(
    params: DecoderParameters,
    input_seq: InputSequence,
    global_feature: np.ndarray,
    dropout_rng: np.random.Generator | None = None,
) -> Tensor:
    """Logits over the vocabulary for the token rows only.

    Attention is causal over the combined prompt+token rows, so every
    token row sees all prompts and the tokens at or before it; each
    block also cross-attends to the single projected feature row.
    """
    cfg = params.config
    feature = np.asarray(global_feature, dtype=np.float64)
    if feature.shape != (cfg.d_clip,):
        raise DimensionError(
            f"global feature shape {list(feature.shape)} vs d_clip {cfg.d_clip}"
        )
    p = cfg.dropout if dropout_rng is not None else 0.0
    f_row = _project("feat", feature[None, :], params)

    x = input_seq.embeddings
    total = x.shape[0]
    mask = np.tril(np.ones((total, total), dtype=bool))
    for i in range(cfg.n_layers):
        h = ad.layer_norm(x, params[f"l{i}.ln1_g"], params[f"l{i}.ln1_b"], LN_EPS)
        x = ad.add(x, ad.dropout(_multi_head(params, f"l{i}.self", h, h, mask), p, dropout_rng))
        h = ad.layer_norm(x, params[f"l{i}.ln2_g"], params[f"l{i}.ln2_b"], LN_EPS)
        x = ad.add(x, ad.dropout(_multi_head(params, f"l{i}.cross", h, f_row, None), p, dropout_rng))
        h = ad.layer_norm(x, params[f"l{i}.ln3_g"], params[f"l{i}.ln3_b"], LN_EPS)
        ff = ad.add(
            ad.matmul(
                ad.gelu(ad.add(ad.matmul(h, params[f"l{i}.ffn1_w"]), params[f"l{i}.ffn1_b"])),
                params[f"l{i}.ffn2_w"],
            ),
            params[f"l{i}.ffn2_b"],
        )
        x = ad.add(x, ad.dropout(ff, p, dropout_rng))

    x = ad.layer_norm(x, params["final_ln_g"], params["final_ln_b"], LN_EPS)
    logits = ad.add(ad.matmul(x, params["out_w"]), params["out_b"])
    token_logits = ad.slice_rows(logits, input_seq.prompt_len, total)
    if not np.isfinite(token_logits.values).all():
        raise NumericError("non-finite decoder logits")
    return token_logits


def forward(
    params: DecoderParameters,
    input_seq: InputSequence,
    global_feature: np.ndarray,
) -> Tensor:
    """Per-token-position probability rows (softmax over the vocab)."""
    return ad.softmax_rows(decode_logits(params, input_seq, global_feature))
