"""Attention and feed-forward blocks shared by encoder and decoder."""
from __future__ import annotations

import math

import numpy as np

from .diffcore import (Tensor, add, affine, concat_cols, dropout, elem_mul,
                       matmul, relu, scale, softmax_rows, transpose)

# additive mask value for disallowed attention positions; large enough to
# underflow to exactly zero after the row-max shift in softmax
MASK_OFF = -1e30


class Dropouter:
    """Training-mode dropout with an explicit generator; None means eval."""

    def __init__(self, rate: float, rng: np.random.Generator):
        self.rate = rate
        self.rng = rng

    def __call__(self, t: Tensor) -> Tensor:
        return dropout(t, self.rate, self.rng) if self.rate > 0.0 else t


def maybe_drop(t: Tensor, drop: Dropouter | None) -> Tensor:
    return drop(t) if drop is not None else t


def causal_mask(n: int) -> Tensor:
    return Tensor(np.triu(np.full((n, n), MASK_OFF), k=1))


def multihead(params, prefix: str, q_in: Tensor, k_in: Tensor, v_in: Tensor,
              heads: int, mask: Tensor | None = None,
              drop: Dropouter | None = None, residual: bool = False) -> Tensor:
    """Scaled dot-product attention with per-head projections.

    Head parameters live at ``{prefix}.h{k}.wq/wk/wv`` and the shared
    output projection at ``{prefix}.wo``.
    """
    contexts = []
    for k in range(heads):
        q = matmul(q_in, params[f"{prefix}.h{k}.wq"])
        key = matmul(k_in, params[f"{prefix}.h{k}.wk"])
        val = matmul(v_in, params[f"{prefix}.h{k}.wv"])
        scores = scale(matmul(q, transpose(key)), 1.0 / math.sqrt(q.shape[1]))
        if mask is not None:
            scores = add(scores, mask)
        contexts.append(matmul(softmax_rows(scores), val))
    out = matmul(concat_cols(*contexts), params[f"{prefix}.wo"])
    out = maybe_drop(out, drop)
    if residual:
        out = add(out, q_in)
    return out


def ffn(params, prefix: str, x: Tensor, drop: Dropouter | None = None) -> Tensor:
    """Two affine layers with a ReLU in between (position-wise)."""
    inner = relu(affine(x, params[f"{prefix}.w1"], params[f"{prefix}.b1"]))
    inner = maybe_drop(inner, drop)
    return affine(inner, params[f"{prefix}.w2"], params[f"{prefix}.b2"])


def broadcast_row(row: Tensor, n_rows: int) -> Tensor:
    """Repeat a 1xd row n times; gradients flow back as the column sum."""
    return matmul(Tensor(np.ones((n_rows, 1))), row)


def one_minus(t: Tensor) -> Tensor:
    return add(scale(t, -1.0), Tensor(np.ones(t.shape)))
