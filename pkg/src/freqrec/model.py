"""Differentiable sequence encoder and full-catalog scoring.

Two encoder kinds share the embedding layer (item plus learned positional
embeddings, added element-wise):

* self_attention: pre-norm causal multi-head self-attention blocks with
  position-wise feed-forward sublayers and a final layer norm; the sequence
  representation is the hidden state at the last valid position.
* mean_pool: mean of the embedded rows through one affine map. It exists as
  a structurally simple reference path for gradient checking.

Scoring reuses the item embedding matrix (tied weights): softmax(h @ M^T).
All parameters are float64 leaf Tensors updated in place by the optimizer.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .rng import RngStream

ENCODER_KINDS = ("self_attention", "mean_pool")


class OutOfVocabularyError(ValueError):
    """An item index falls outside the embedding table."""


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 64
    num_layers: int = 2
    num_heads: int = 2
    max_len: int = 50
    dropout_rate: float = 0.1
    encoder_kind: str = "self_attention"

    def __post_init__(self):
        if self.embed_dim % self.num_heads != 0:
            raise ValueError("embed_dim must be divisible by num_heads")
        if self.max_len < 2:
            raise ValueError("max_len must be >= 2")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.encoder_kind not in ENCODER_KINDS:
            raise ValueError(f"encoder_kind must be one of {ENCODER_KINDS}")

    def to_dict(self) -> dict:
        return asdict(self)


class ModelParams:
    """Named parameter tensors; iteration order is fixed at construction."""

    def __init__(self, config: ModelConfig, num_items: int, tensors: dict[str, Tensor]):
        self.config = config
        self.num_items = num_items
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.config,
            self.num_items,
            {n: ad.leaf(t.data.copy(), n) for n, t in self.tensors.items()},
        )


GradientSet = dict


def _param_shapes(config: ModelConfig, num_items: int) -> list[tuple[str, tuple[int, ...], str]]:
    """(name, shape, init kind) for every tensor, in canonical order."""
    d = config.embed_dim
    shapes: list[tuple[str, tuple[int, ...], str]] = [
        ("item_emb", (num_items, d), "normal"),
        ("pos_emb", (config.max_len, d), "normal"),
    ]
    if config.encoder_kind == "mean_pool":
        shapes.append(("pool.w", (d, d), "normal"))
        shapes.append(("pool.b", (d,), "zeros"))
        return shapes
    for i in range(config.num_layers):
        p = f"layer{i}"
        shapes += [
            (f"{p}.ln1.gain", (d,), "ones"),
            (f"{p}.ln1.bias", (d,), "zeros"),
            (f"{p}.attn.wq", (d, d), "normal"),
            (f"{p}.attn.bq", (d,), "zeros"),
            (f"{p}.attn.wk", (d, d), "normal"),
            (f"{p}.attn.bk", (d,), "zeros"),
            (f"{p}.attn.wv", (d, d), "normal"),
            (f"{p}.attn.bv", (d,), "zeros"),
            (f"{p}.attn.wo", (d, d), "normal"),
            (f"{p}.attn.bo", (d,), "zeros"),
            (f"{p}.ln2.gain", (d,), "ones"),
            (f"{p}.ln2.bias", (d,), "zeros"),
            (f"{p}.ffn.w1", (d, 4 * d), "normal"),
            (f"{p}.ffn.b1", (4 * d,), "zeros"),
            (f"{p}.ffn.w2", (4 * d, d), "normal"),
            (f"{p}.ffn.b2", (d,), "zeros"),
        ]
    shapes += [("ln_f.gain", (d,), "ones"), ("ln_f.bias", (d,), "zeros")]
    return shapes


def init_params(config: ModelConfig, num_items: int, stream: RngStream) -> ModelParams:
    """Weights and embeddings are zero-mean normal with scale 1/sqrt(d);
    layer-norm gains start at 1 and all biases at 0."""
    if num_items < 1:
        raise ValueError("num_items must be >= 1")
    gen = stream.generator()
    scale = config.embed_dim ** -0.5
    tensors: dict[str, Tensor] = {}
    for name, shape, kind in _param_shapes(config, num_items):
        if kind == "normal":
            data = gen.normal(0.0, scale, size=shape)
        elif kind == "ones":
            data = np.ones(shape)
        else:
            data = np.zeros(shape)
        tensors[name] = ad.leaf(data, name)
    return ModelParams(config, num_items, tensors)


# --- forward passes ---


def embed_batch(item_idx: np.ndarray, params: ModelParams) -> Tensor:
    """Item embedding plus positional embedding for a padded index batch."""
    item_idx = np.asarray(item_idx)
    if item_idx.ndim != 2:
        raise ValueError("expected a (batch, time) index array")
    T = item_idx.shape[1]
    if T > params.config.max_len:
        raise ValueError(f"sequence length {T} exceeds max_len {params.config.max_len}")
    if item_idx.min() < 0 or item_idx.max() >= params.num_items:
        raise OutOfVocabularyError(
            f"item index outside [0, {params.num_items}): "
            f"range [{item_idx.min()}, {item_idx.max()}]"
        )
    E = ad.take_rows(params["item_emb"], item_idx)
    P = ad.take_rows(params["pos_emb"], np.arange(T))
    return ad.add(E, P)


def embed_sequence(seq: Sequence[int], params: ModelParams) -> Tensor:
    """Embedded matrix for a single sequence: row i is m_{v_i} + p_i."""
    idx = np.asarray(list(seq), dtype=int).reshape(1, -1)
    return ad.reshape(embed_batch(idx, params), (idx.shape[1], params.config.embed_dim))


def _attention_mask(lengths: np.ndarray, T: int) -> np.ndarray:
    """Additive mask (B, 1, T, T): 0 where query may attend, -inf otherwise.

    Queries attend causally (key position <= query position) and only to
    non-padding keys. Padding is on the right, so every row keeps at least
    position 0 and softmax never sees an all-masked row.
    """
    causal = np.tril(np.ones((T, T), dtype=bool))
    key_valid = np.arange(T)[None, :] < lengths[:, None]
    allowed = causal[None, :, :] & key_valid[:, None, :]
    mask = np.where(allowed, 0.0, -np.inf)
    return mask[:, None, :, :]


def _split_heads(t: Tensor, B: int, T: int, H: int, dh: int) -> Tensor:
    return ad.transpose(ad.reshape(t, (B, T, H, dh)), (0, 2, 1, 3))


def _merge_heads(t: Tensor, B: int, T: int, d: int) -> Tensor:
    return ad.reshape(ad.transpose(t, (0, 2, 1, 3)), (B, T, d))


def _encoder_stack(
    E: Tensor,
    lengths: np.ndarray,
    params: ModelParams,
    config: ModelConfig,
    mode: str,
    gen: np.random.Generator | None,
) -> Tensor:
    B, T, d = E.shape
    H = config.num_heads
    dh = d // H
    rate = config.dropout_rate if mode == "train" else 0.0
    if rate > 0.0 and gen is None:
        raise ValueError("train-mode dropout needs a random generator")
    mask = _attention_mask(lengths, T)
    x = E
    for i in range(config.num_layers):
        p = f"layer{i}"
        h = ad.layer_norm(x, params[f"{p}.ln1.gain"], params[f"{p}.ln1.bias"])
        q = ad.add(ad.matmul(h, params[f"{p}.attn.wq"]), params[f"{p}.attn.bq"])
        k = ad.add(ad.matmul(h, params[f"{p}.attn.wk"]), params[f"{p}.attn.bk"])
        v = ad.add(ad.matmul(h, params[f"{p}.attn.wv"]), params[f"{p}.attn.bv"])
        q = _split_heads(q, B, T, H, dh)
        k = _split_heads(k, B, T, H, dh)
        v = _split_heads(v, B, T, H, dh)
        scores = ad.mul_const(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), dh ** -0.5)
        scores = ad.add_const(scores, mask)
        attn = ad.softmax(scores)
        attn = ad.dropout(attn, rate, gen)
        ctx = _merge_heads(ad.matmul(attn, v), B, T, d)
        ctx = ad.add(ad.matmul(ctx, params[f"{p}.attn.wo"]), params[f"{p}.attn.bo"])
        ctx = ad.dropout(ctx, rate, gen)
        x = ad.add(x, ctx)
        h2 = ad.layer_norm(x, params[f"{p}.ln2.gain"], params[f"{p}.ln2.bias"])
        f = ad.gelu(ad.add(ad.matmul(h2, params[f"{p}.ffn.w1"]), params[f"{p}.ffn.b1"]))
        f = ad.add(ad.matmul(f, params[f"{p}.ffn.w2"]), params[f"{p}.ffn.b2"])
        f = ad.dropout(f, rate, gen)
        x = ad.add(x, f)
    return ad.layer_norm(x, params["ln_f.gain"], params["ln_f.bias"])


def encode_batch(
    E: Tensor,
    lengths: np.ndarray,
    params: ModelParams,
    config: ModelConfig,
    mode: str = "eval",
    gen: np.random.Generator | None = None,
    readout: np.ndarray | None = None,
) -> Tensor:
    """Sequence representations for a padded batch: (B, d).

    The readout position defaults to the last valid position per row; it can
    be overridden (used by the causality check).
    """
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    lengths = np.asarray(lengths, dtype=int)
    B, T, d = E.shape
    if readout is None:
        readout = lengths - 1
    if config.encoder_kind == "mean_pool":
        valid = (np.arange(T)[None, :] < lengths[:, None]).astype(float)[:, :, None]
        pooled = ad.mul_const(
            ad.sum_(ad.mul_const(E, valid), axis=1), (1.0 / lengths)[:, None]
        )
        return ad.add(ad.matmul(pooled, params["pool.w"]), params["pool.b"])
    x = _encoder_stack(E, lengths, params, config, mode, gen)
    return ad.take_at(x, (np.arange(B), readout))


def encode(
    E_u: Tensor,
    params: ModelParams,
    config: ModelConfig,
    mode: str = "eval",
    gen: np.random.Generator | None = None,
) -> Tensor:
    """Representation of one embedded sequence: a d-vector Tensor."""
    n, d = E_u.shape
    batched = ad.reshape(E_u, (1, n, d))
    h = encode_batch(batched, np.array([n]), params, config, mode, gen)
    return ad.reshape(h, (d,))


def score_items(h_u: Tensor, params: ModelParams) -> Tensor:
    """softmax(h @ M^T): a strictly positive distribution over the catalog."""
    single = h_u.ndim == 1
    h = ad.reshape(h_u, (1, -1)) if single else h_u
    logits = ad.matmul(h, ad.transpose(params["item_emb"], (1, 0)))
    probs = ad.softmax(logits)
    return ad.reshape(probs, (params.num_items,)) if single else probs


def backward(loss: Tensor, params: ModelParams) -> GradientSet:
    """Gradient of a scalar loss for every parameter tensor.

    Parameters that do not participate in the graph get exact zeros. Raises
    NumericalError naming the first tensor with a non-finite gradient.
    """
    for t in params.tensors.values():
        t.grad = None
    ad.backward(loss)
    grads: GradientSet = {}
    for name, t in params.tensors.items():
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not np.isfinite(g).all():
            raise ad.NumericalError(name)
        grads[name] = g
    return grads


def pad_batch(seqs: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad sequences with index 0 (masked out) into a dense batch."""
    lengths = np.array([len(s) for s in seqs], dtype=int)
    if (lengths == 0).any():
        raise ValueError("cannot pad an empty sequence")
    T = int(lengths.max())
    idx = np.zeros((len(seqs), T), dtype=int)
    for r, s in enumerate(seqs):
        idx[r, : len(s)] = list(s)
    return idx, lengths


# --- checkpoints ---

_MAGIC = b"FRQR"
_VERSION = 1


def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    """Versioned binary container: JSON header plus raw little-endian tensors."""
    header = {
        "version": _VERSION,
        "config": params.config.to_dict(),
        "num_items": params.num_items,
        "tensors": [
            {"name": n, "shape": list(t.data.shape)} for n, t in params.tensors.items()
        ],
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for t in params.tensors.values():
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> ModelParams:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header["version"] != _VERSION:
            raise ValueError(f"unsupported checkpoint version {header['version']}")
        config = ModelConfig(**header["config"])
        tensors: dict[str, Tensor] = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape).copy()
            tensors[entry["name"]] = ad.leaf(data, entry["name"])
    return ModelParams(config, header["num_items"], tensors)


def inspect_checkpoint(path: str | Path) -> list[tuple[str, tuple[int, ...], float]]:
    """(name, shape, L2 norm) per tensor, for the CLI inspect command."""
    params = load_checkpoint(path)
    return [
        (n, tuple(t.data.shape), float(np.linalg.norm(t.data)))
        for n, t in params.tensors.items()
    ]
