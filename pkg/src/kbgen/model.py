"""Autoregressive transformer over encoded tuple grids.

Decoder-only architecture: token + position embeddings feed a stack of
identical blocks, each applying causal multi-headed scaled dot-product
attention and a two-layer GeLU feed-forward, with residual connections
normalized *after* each sum (post-norm). The output projection is tied
to the token embedding table. Causality is an additive pre-softmax mask
that zeroes attention to future positions exactly, so outputs at
position t depend only on tokens at positions <= t.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import KbgenError
from .autodiff import (
    Tensor,
    add,
    dropout,
    embedding,
    gelu,
    layer_norm,
    matmul,
    mul,
    reshape,
    scale,
    softmax,
    swap_last_axes,
    transpose,
)

CHECKPOINT_FORMAT_VERSION = 1

NEG_INF = -1e9  # large enough that exp() underflows to exactly 0.0


class ModelError(KbgenError):
    pass


class CheckpointError(ModelError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointHashError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    n_layers: int = 2
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 256
    max_seq_len: int = 40
    dropout: float = 0.1

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ModelError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        if self.vocab_size < 1:
            raise ModelError("vocab_size must be positive")

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def paper_scale_config(vocab_size: int, max_seq_len: int = 64) -> ModelConfig:
    """The full-size architecture (12 layers, 768 dims, 12 heads)."""
    return ModelConfig(
        vocab_size=vocab_size,
        n_layers=12,
        d_model=768,
        n_heads=12,
        d_ff=3072,
        max_seq_len=max_seq_len,
        dropout=0.1,
    )


def parameter_names(config: ModelConfig) -> list[str]:
    names = ["tok_emb", "pos_emb"]
    for i in range(config.n_layers):
        p = f"blocks.{i}"
        names += [
            f"{p}.attn.w_q",
            f"{p}.attn.w_k",
            f"{p}.attn.w_v",
            f"{p}.attn.w_o",
            f"{p}.ln1.gain",
            f"{p}.ln1.bias",
            f"{p}.ffn.w1",
            f"{p}.ffn.b1",
            f"{p}.ffn.w2",
            f"{p}.ffn.b2",
            f"{p}.ln2.gain",
            f"{p}.ln2.bias",
        ]
    return names


def is_decayed(name: str) -> bool:
    """Weight decay applies to projection matrices only (no embeddings,
    biases, or layer-norm affines)."""
    return name.split(".")[-1] in ("w_q", "w_k", "w_v", "w_o", "w1", "w2")


def init_parameters(
    config: ModelConfig, n_special_tokens: int, seed: int, dtype=np.float32
) -> dict[str, Tensor]:
    """Fresh parameters: weights and word embeddings ~ N(0, 0.02^2),
    special-token embedding rows ~ N(0, 1), layer norms at identity."""
    if n_special_tokens > config.vocab_size:
        raise ModelError("more special tokens than vocabulary entries")
    rng = np.random.default_rng([seed, 0x1417])
    d, f, v = config.d_model, config.d_ff, config.vocab_size

    def normal(shape, std):
        return rng.normal(0.0, std, shape).astype(dtype)

    params: dict[str, Tensor] = {}
    tok = normal((v, d), 0.02)
    tok[:n_special_tokens] = normal((n_special_tokens, d), 1.0)
    params["tok_emb"] = Tensor(tok)
    params["pos_emb"] = Tensor(normal((config.max_seq_len, d), 0.02))
    for i in range(config.n_layers):
        p = f"blocks.{i}"
        params[f"{p}.attn.w_q"] = Tensor(normal((d, d), 0.02))
        params[f"{p}.attn.w_k"] = Tensor(normal((d, d), 0.02))
        params[f"{p}.attn.w_v"] = Tensor(normal((d, d), 0.02))
        params[f"{p}.attn.w_o"] = Tensor(normal((d, d), 0.02))
        params[f"{p}.ln1.gain"] = Tensor(np.ones(d, dtype=dtype))
        params[f"{p}.ln1.bias"] = Tensor(np.zeros(d, dtype=dtype))
        params[f"{p}.ffn.w1"] = Tensor(normal((d, f), 0.02))
        params[f"{p}.ffn.b1"] = Tensor(np.zeros(f, dtype=dtype))
        params[f"{p}.ffn.w2"] = Tensor(normal((f, d), 0.02))
        params[f"{p}.ffn.b2"] = Tensor(np.zeros(d, dtype=dtype))
        params[f"{p}.ln2.gain"] = Tensor(np.ones(d, dtype=dtype))
        params[f"{p}.ln2.bias"] = Tensor(np.zeros(d, dtype=dtype))
    return params


def clone_parameters(params: dict[str, Tensor]) -> dict[str, Tensor]:
    return {k: Tensor(v.data.copy()) for k, v in params.items()}


def cast_parameters(params: dict[str, Tensor], dtype) -> dict[str, Tensor]:
    return {k: Tensor(v.data.astype(dtype)) for k, v in params.items()}


def causal_mask(t: int, dtype=np.float32) -> np.ndarray:
    """(1, 1, t, t) additive mask: 0 on and below the diagonal, a large
    negative above it (keys strictly in the future)."""
    m = np.triu(np.full((t, t), NEG_INF, dtype=dtype), k=1)
    return m[None, None, :, :]


def input_encode(params: dict[str, Tensor], ids: np.ndarray, config: ModelConfig) -> Tensor:
    """Sum of word embedding and absolute position embedding."""
    ids = np.asarray(ids)
    t = ids.shape[-1]
    if t > config.max_seq_len:
        raise ModelError(f"sequence length {t} exceeds max_seq_len {config.max_seq_len}")
    tok = embedding(params["tok_emb"], ids)
    pos = embedding(params["pos_emb"], np.arange(t))
    return add(tok, pos)


def attention(q: Tensor, k: Tensor, v: Tensor, d_k: int, additive_mask=None,
              dropout_rate: float = 0.0, rng=None, training: bool = False,
              return_weights: bool = False):
    """Scaled dot-product attention: softmax(QK^T / sqrt(d_k)) V."""
    scores = scale(matmul(q, swap_last_axes(k)), 1.0 / np.sqrt(d_k))
    if additive_mask is not None:
        scores = add(scores, additive_mask)
    weights = softmax(scores, axis=-1)
    dropped = dropout(weights, dropout_rate, rng=rng, training=training)
    out = matmul(dropped, v)
    if return_weights:
        return out, weights
    return out


def multi_head(
    q_in: Tensor,
    k_in: Tensor,
    v_in: Tensor,
    params: dict[str, Tensor],
    prefix: str,
    config: ModelConfig,
    additive_mask=None,
    rng=None,
    training: bool = False,
) -> Tensor:
    """Project inputs per head, attend, concatenate heads, and project.

    The per-head projections live as column blocks of the fused (d, d)
    matrices; reshaping splits them back out.
    """
    b, t, d = q_in.data.shape
    h, dk = config.n_heads, config.d_k

    def heads(x, w):
        y = matmul(x, params[w])  # (b, t, d)
        y = reshape(y, (b, t, h, dk))
        return transpose(y, (0, 2, 1, 3))  # (b, h, t, dk)

    qh = heads(q_in, f"{prefix}.attn.w_q")
    kh = heads(k_in, f"{prefix}.attn.w_k")
    vh = heads(v_in, f"{prefix}.attn.w_v")
    ctx = attention(
        qh, kh, vh, dk,
        additive_mask=additive_mask,
        dropout_rate=config.dropout,
        rng=rng,
        training=training,
    )
    merged = reshape(transpose(ctx, (0, 2, 1, 3)), (b, t, d))
    return matmul(merged, params[f"{prefix}.attn.w_o"])


@dataclass
class ActivationCache:
    """Per-layer intermediates, one (batch, seq, d_model) array each."""

    attn_out: list = field(default_factory=list)
    after_ln1: list = field(default_factory=list)
    ffn_out: list = field(default_factory=list)
    block_out: list = field(default_factory=list)


def transformer_block(
    h: Tensor,
    params: dict[str, Tensor],
    prefix: str,
    config: ModelConfig,
    additive_mask,
    rng=None,
    training: bool = False,
    cache: ActivationCache | None = None,
) -> Tensor:
    """One block: self-attention and FFN, each followed by residual +
    post-layer-norm, in that exact order."""
    attn = multi_head(h, h, h, params, prefix, config,
                      additive_mask=additive_mask, rng=rng, training=training)
    attn_res = dropout(attn, config.dropout, rng=rng, training=training)
    g = layer_norm(add(attn_res, h), params[f"{prefix}.ln1.gain"], params[f"{prefix}.ln1.bias"])
    ff = matmul(gelu(add(matmul(g, params[f"{prefix}.ffn.w1"]), params[f"{prefix}.ffn.b1"])),
                params[f"{prefix}.ffn.w2"])
    ff = add(ff, params[f"{prefix}.ffn.b2"])
    ff_res = dropout(ff, config.dropout, rng=rng, training=training)
    out = layer_norm(add(ff_res, g), params[f"{prefix}.ln2.gain"], params[f"{prefix}.ln2.bias"])
    if cache is not None:
        cache.attn_out.append(attn.data)
        cache.after_ln1.append(g.data)
        cache.ffn_out.append(ff.data)
        cache.block_out.append(out.data)
    return out


def forward(
    params: dict[str, Tensor],
    config: ModelConfig,
    ids: np.ndarray,
    rng=None,
    training: bool = False,
    cache: ActivationCache | None = None,
) -> Tensor:
    """Logits (batch, seq, vocab); position t scores the token at t+1."""
    ids = np.asarray(ids)
    if ids.ndim == 1:
        ids = ids[None, :]
    h = input_encode(params, ids, config)
    h = dropout(h, config.dropout, rng=rng, training=training)
    mask = causal_mask(ids.shape[-1], dtype=params["tok_emb"].data.dtype)
    for i in range(config.n_layers):
        h = transformer_block(
            h, params, f"blocks.{i}", config, mask,
            rng=rng, training=training, cache=cache,
        )
    return matmul(h, swap_last_axes(params["tok_emb"]))


def save_checkpoint(params: dict[str, Tensor], config: ModelConfig, vocab_sha256: str, path):
    """Single file: one compact JSON manifest line, then raw little-endian
    float32 tensor payloads in manifest order."""
    entries = []
    payloads = []
    offset = 0
    for name in parameter_names(config):
        arr = np.ascontiguousarray(params[name].data.astype("<f4"))
        raw = arr.tobytes()
        entries.append(
            {"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        )
        payloads.append(raw)
        offset += len(raw)
    manifest = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": config.to_dict(),
        "vocab_sha256": vocab_sha256,
        "tensors": entries,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(manifest, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for raw in payloads:
            fh.write(raw)


def load_checkpoint(path, expected_vocab_sha256: str | None = None):
    """Returns (params, config, manifest). Raises distinct errors for a
    format-version mismatch, vocabulary-hash mismatch, or truncation."""
    with open(path, "rb") as fh:
        blob = fh.read()
    nl = blob.find(b"\n")
    if nl < 0:
        raise CheckpointTruncatedError(f"{path}: no manifest line")
    try:
        manifest = json.loads(blob[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable manifest: {exc}") from None
    version = manifest.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version!r}, expected {CHECKPOINT_FORMAT_VERSION}"
        )
    if expected_vocab_sha256 is not None and manifest["vocab_sha256"] != expected_vocab_sha256:
        raise CheckpointHashError(
            f"{path}: checkpoint was saved with a different vocabulary "
            f"({manifest['vocab_sha256'][:12]}... != {expected_vocab_sha256[:12]}...)"
        )
    payload = blob[nl + 1 :]
    params = {}
    for entry in manifest["tensors"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        chunk = payload[start : start + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointTruncatedError(
                f"{path}: tensor {entry['name']} needs {nbytes} bytes at offset {start}"
            )
        arr = np.frombuffer(chunk, dtype="<f4").reshape(entry["shape"]).copy()
        params[entry["name"]] = Tensor(arr)
    config = ModelConfig.from_dict(manifest["config"])
    return params, config, manifest
