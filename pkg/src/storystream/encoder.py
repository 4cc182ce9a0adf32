"""Trainable article encoder.

Maps an article's padded sentence-embedding matrix to one article
representation: sentence-level multi-head self-attention, then layer
norm over the residual sum followed by a tanh linear layer, then
attentive pooling across sentences.

Because padding is always a row prefix's complement, the whole forward
pass runs on the real-row slice; that is numerically identical to masked
computation over the padded matrix, and the public functions re-pad
their outputs to full capacity.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .domain import SentenceMatrix
from . import numkernel as nk
from .numkernel import Tape, Tensor

CHECKPOINT_MAGIC = b"SCSE"
CHECKPOINT_VERSION = 1


class BadDims(ValueError):
    pass


class CheckpointError(ValueError):
    """Unreadable or inconsistent encoder checkpoint file."""


@dataclass
class EncoderParams:
    """All learnable weights, in checkpoint declaration order."""

    query_w: List[Tensor]  # per head, h_e x (h_e / n)
    key_w: List[Tensor]
    value_w: List[Tensor]
    out_w: Tensor          # h_e x h_e
    mix_w: Tensor          # h_e x h_c
    mix_b: Tensor          # 1 x h_c
    pool_w: Tensor         # h_c x h_c
    pool_b: Tensor         # 1 x h_c
    pool_v: Tensor         # h_c x 1
    h_e: int
    h_c: int
    n_heads: int

    def named(self) -> List[Tuple[str, Tensor]]:
        out = []
        for j in range(self.n_heads):
            out.append((f"head{j}.query_w", self.query_w[j]))
            out.append((f"head{j}.key_w", self.key_w[j]))
            out.append((f"head{j}.value_w", self.value_w[j]))
        out.extend(
            [
                ("out_w", self.out_w),
                ("mix_w", self.mix_w),
                ("mix_b", self.mix_b),
                ("pool_w", self.pool_w),
                ("pool_b", self.pool_b),
                ("pool_v", self.pool_v),
            ]
        )
        return out

    def tensors(self) -> List[Tensor]:
        return [t for _, t in self.named()]


@dataclass
class EncodeOutput:
    """Everything the rest of the engine wants from one encode pass.

    ``pooling_weights`` are the attentive-pooling softmax weights;
    ``attention_importance`` is per-sentence attention received inside
    the self-attention block, head-summed and normalized. Both are zero
    on padded positions and sum to 1 over real ones.
    """

    article_repr: np.ndarray        # (h_c,)
    sentence_reprs: np.ndarray      # (L, h_c), zero on padded rows
    pooling_weights: np.ndarray     # (L,)
    attention_importance: np.ndarray  # (L,)


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    bound = float(np.sqrt(6.0 / (fan_in + fan_out)))
    return rng.uniform(-bound, bound, size=shape)


def init_params(seed: int, h_e: int, h_c: int, n: int) -> EncoderParams:
    """Deterministic Xavier-uniform weights, zero biases."""
    if n < 1 or h_e % n != 0:
        raise BadDims(f"h_e={h_e} must be divisible by n={n}")
    if h_c < 2 or h_e < 2:
        raise BadDims("h_e and h_c must be >= 2")
    rng = np.random.default_rng(seed)
    d = h_e // n
    query_w, key_w, value_w = [], [], []
    for _ in range(n):
        query_w.append(nk.parameter(_xavier(rng, h_e, d, (h_e, d))))
        key_w.append(nk.parameter(_xavier(rng, h_e, d, (h_e, d))))
        value_w.append(nk.parameter(_xavier(rng, h_e, d, (h_e, d))))
    out_w = nk.parameter(_xavier(rng, h_e, h_e, (h_e, h_e)))
    mix_w = nk.parameter(_xavier(rng, h_e, h_c, (h_e, h_c)))
    mix_b = nk.parameter(np.zeros((1, h_c)))
    pool_w = nk.parameter(_xavier(rng, h_c, h_c, (h_c, h_c)))
    pool_b = nk.parameter(np.zeros((1, h_c)))
    pool_v = nk.parameter(_xavier(rng, h_c, 1, (h_c, 1)))
    return EncoderParams(
        query_w=query_w,
        key_w=key_w,
        value_w=value_w,
        out_w=out_w,
        mix_w=mix_w,
        mix_b=mix_b,
        pool_w=pool_w,
        pool_b=pool_b,
        pool_v=pool_v,
        h_e=h_e,
        h_c=h_c,
        n_heads=n,
    )


def _check_input(sm: SentenceMatrix, params: EncoderParams) -> int:
    m = sm.n_real
    if m < 1:
        raise nk.AllMasked(f"{sm.article_id}: article has no real sentences")
    if sm.rows.shape[1] != params.h_e:
        raise BadDims(
            f"{sm.article_id}: sentence dim {sm.rows.shape[1]} != encoder h_e {params.h_e}"
        )
    return m


def _graph(e_real: Tensor, params: EncoderParams, tape: Optional[Tape]) -> dict:
    """Forward graph over the m x h_e real-row slice.

    Returns the attention matrices (m x m per head), sentence
    representations (m x h_c), pooling weights (1 x m) and the article
    representation (1 x h_c) as tensors on ``tape``.
    """
    m = e_real.data.shape[0]
    inv_sqrt_d = 1.0 / np.sqrt(params.h_e / params.n_heads)
    all_true = np.ones(m, dtype=bool)

    heads = []
    attn = []
    for j in range(params.n_heads):
        q = nk.matmul(e_real, params.query_w[j], tape)
        k = nk.matmul(e_real, params.key_w[j], tape)
        v = nk.matmul(e_real, params.value_w[j], tape)
        logits = nk.scale(nk.matmul(q, nk.transpose(k, tape), tape), inv_sqrt_d, tape)
        a = nk.masked_row_softmax(logits, all_true, tape)
        attn.append(a)
        heads.append(nk.matmul(a, v, tape))
    context = nk.matmul(nk.concat_cols(heads, tape), params.out_w, tape)

    normed = nk.layer_norm(nk.add(context, e_real, tape=tape), tape)
    mixed = nk.add_rowvec(nk.matmul(normed, params.mix_w, tape), params.mix_b, tape)
    sent = nk.tanh(mixed, tape)

    pooled_in = nk.add_rowvec(nk.matmul(sent, params.pool_w, tape), params.pool_b, tape)
    scores = nk.matmul(nk.tanh(pooled_in, tape), params.pool_v, tape)  # m x 1
    alpha = nk.masked_row_softmax(nk.transpose(scores, tape), all_true, tape)  # 1 x m
    article = nk.matmul(alpha, sent, tape)  # 1 x h_c
    return {"attn": attn, "context": context, "sent": sent, "alpha": alpha, "article": article}


def _importance_from_attn(attn_data: List[np.ndarray]) -> np.ndarray:
    """Attention received per sentence, summed over heads and queries, sum 1."""
    received = np.zeros(attn_data[0].shape[1])
    for a in attn_data:
        received += a.sum(axis=0)
    total = received.sum()
    if total <= 0.0:  # cannot happen with a softmax, kept as a guard
        return np.full_like(received, 1.0 / received.shape[0])
    return received / total


def mhs(sm: SentenceMatrix, params: EncoderParams) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Multi-head self-attention context and per-head attention matrices.

    Returns the L x h_e context (zero on padded query rows) and one
    L x L attention matrix per head (rows over unmasked keys sum to 1,
    padded rows/columns zero).
    """
    m = _check_input(sm, params)
    L = sm.rows.shape[0]
    g = _graph(nk.constant(sm.real_rows()), params, None)
    context = np.zeros((L, params.h_e))
    context[:m] = g["context"].data
    padded_attn = []
    for a in g["attn"]:
        full = np.zeros((L, L))
        full[:m, :m] = a.data
        padded_attn.append(full)
    return context, padded_attn


def sentence_context(sm: SentenceMatrix, params: EncoderParams) -> np.ndarray:
    """Per-sentence contextual representations, L x h_c (padded rows zero)."""
    m = _check_input(sm, params)
    g = _graph(nk.constant(sm.real_rows()), params, None)
    out = np.zeros((sm.rows.shape[0], params.h_c))
    out[:m] = g["sent"].data
    return out


def attentive_pool(
    c: np.ndarray, mask, params: EncoderParams
) -> Tuple[np.ndarray, np.ndarray]:
    """Pool sentence representations into one article vector.

    ``mask`` may be any boolean selection (not just a prefix); masked
    rows get weight exactly 0 and the weights sum to 1 over the rest.
    """
    c = np.asarray(c, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise nk.AllMasked("attentive_pool: all rows masked")
    real = nk.constant(c[mask])
    pooled_in = nk.add_rowvec(nk.matmul(real, params.pool_w, None), params.pool_b, None)
    scores = nk.matmul(nk.tanh(pooled_in, None), params.pool_v, None)
    alpha_real = nk.masked_row_softmax(
        nk.transpose(scores, None), np.ones(int(mask.sum()), dtype=bool), None
    )
    article = nk.matmul(alpha_real, real, None)
    alpha = np.zeros(mask.shape[0])
    alpha[mask] = alpha_real.data[0]
    return article.data[0].copy(), alpha


def encode_article(sm: SentenceMatrix, params: EncoderParams) -> EncodeOutput:
    """Full inference pass; pure in (matrix, params)."""
    m = _check_input(sm, params)
    L = sm.rows.shape[0]
    g = _graph(nk.constant(sm.real_rows()), params, None)

    sent = np.zeros((L, params.h_c))
    sent[:m] = g["sent"].data
    alpha = np.zeros(L)
    alpha[:m] = g["alpha"].data[0]
    importance = np.zeros(L)
    importance[:m] = _importance_from_attn([a.data for a in g["attn"]])
    return EncodeOutput(
        article_repr=g["article"].data[0].copy(),
        sentence_reprs=sent,
        pooling_weights=alpha,
        attention_importance=importance,
    )


def encode_article_node(sm: SentenceMatrix, params: EncoderParams, tape: Tape) -> Tensor:
    """Article representation as a 1 x h_c node on ``tape`` (training path)."""
    _check_input(sm, params)
    return _graph(nk.constant(sm.real_rows()), params, tape)["article"]


def mean_pool_baseline(sm: SentenceMatrix) -> np.ndarray:
    """Arithmetic mean of the real sentence rows (cold-start embedding)."""
    if sm.n_real < 1:
        raise nk.AllMasked(f"{sm.article_id}: article has no real sentences")
    return sm.real_rows().mean(axis=0)


# ---------------------------------------------------------------------------
# checkpoint format: header {magic, version u32, h_e u32, h_c u32, n u32},
# then every tensor in declaration order, row-major float32 little-endian.

_HEADER = struct.Struct("<4sIIII")


def save_params(params: EncoderParams, path) -> None:
    with open(path, "wb") as fh:
        fh.write(
            _HEADER.pack(
                CHECKPOINT_MAGIC, CHECKPOINT_VERSION, params.h_e, params.h_c, params.n_heads
            )
        )
        for _, t in params.named():
            fh.write(t.data.astype("<f4").tobytes(order="C"))


def load_params(path) -> EncoderParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise CheckpointError("checkpoint truncated: header incomplete")
    magic, version, h_e, h_c, n = _HEADER.unpack_from(blob, 0)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if n < 1 or h_e % n != 0:
        raise CheckpointError(f"inconsistent dims in header: h_e={h_e}, n={n}")

    d = h_e // n
    shapes = []
    for _ in range(n):
        shapes.extend([(h_e, d), (h_e, d), (h_e, d)])
    shapes.extend([(h_e, h_e), (h_e, h_c), (1, h_c), (h_c, h_c), (1, h_c), (h_c, 1)])

    offset = _HEADER.size
    arrays = []
    for shape in shapes:
        count = shape[0] * shape[1]
        nbytes = count * 4
        if offset + nbytes > len(blob):
            raise CheckpointError("checkpoint truncated: tensor data incomplete")
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape)
        arrays.append(arr.astype(np.float64))
        offset += nbytes
    if offset != len(blob):
        raise CheckpointError("checkpoint has trailing bytes")
    flat = np.concatenate([a.ravel() for a in arrays])
    if not np.isfinite(flat).all():
        raise CheckpointError("checkpoint contains non-finite values")

    it = iter(arrays)
    query_w, key_w, value_w = [], [], []
    for _ in range(n):
        query_w.append(nk.parameter(next(it)))
        key_w.append(nk.parameter(next(it)))
        value_w.append(nk.parameter(next(it)))
    return EncoderParams(
        query_w=query_w,
        key_w=key_w,
        value_w=value_w,
        out_w=nk.parameter(next(it)),
        mix_w=nk.parameter(next(it)),
        mix_b=nk.parameter(next(it)),
        pool_w=nk.parameter(next(it)),
        pool_b=nk.parameter(next(it)),
        pool_v=nk.parameter(next(it)),
        h_e=h_e,
        h_c=h_c,
        n_heads=n,
    )
