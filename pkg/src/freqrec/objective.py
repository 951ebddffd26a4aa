"""Recommendation loss, contrastive loss, and the weighted total objective.

Each loss exists in two forms: a plain-numpy reference (the spec-level
contract, used by tests and evaluation) and a Tensor-graph version used by
the trainer. The contrastive loss uses in-batch negatives: for anchor u the
positive is u's sibling view and the negatives are the other rows of the
candidate batch; the positive term is included in the denominator, so the
per-anchor loss is always >= 0 and equals log B for B identical rows.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

logger = logging.getLogger(__name__)

_PROB_FLOOR = 1e-300


@dataclass(frozen=True)
class LossConfig:
    cl_weight: float = 0.1     # weight of the contrastive term in the total loss
    temperature: float = 1.0   # similarity scale inside the contrastive softmax
    symmetric: bool = True     # average both directions of the view pair

    def __post_init__(self):
        if self.cl_weight < 0:
            raise ValueError("cl_weight must be >= 0")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


# --- recommendation loss ---


def rec_loss(scores: np.ndarray, target: int) -> float:
    """Negative log probability of the target under a score distribution.

    A numerically zero target probability is floored at 1e-300 (logged) so
    the loss stays finite.
    """
    scores = np.asarray(scores, dtype=float)
    if not 0 <= target < scores.shape[-1]:
        raise ValueError(f"target {target} outside catalog of {scores.shape[-1]}")
    p = scores[target]
    if p < _PROB_FLOOR:
        logger.warning("target probability %.3g floored at %.0e", p, _PROB_FLOOR)
        p = _PROB_FLOOR
    return -math.log(p)


def rec_loss_batch(h: Tensor, item_emb: Tensor, targets: np.ndarray) -> Tensor:
    """Per-user -log softmax(h M^T)[target] as a (B,) Tensor."""
    targets = np.asarray(targets, dtype=int)
    logits = ad.matmul(h, ad.transpose(item_emb, (1, 0)))
    lp = ad.log_softmax(logits)
    picked = ad.take_at(lp, (np.arange(len(targets)), targets))
    return ad.neg(picked)


# --- contrastive loss ---


def _check_nonzero(h: np.ndarray, side: str) -> None:
    norms = np.linalg.norm(h, axis=-1)
    if (norms == 0.0).any():
        raise ValueError(f"zero-norm representation in {side} batch; cosine undefined")


def _cosine_matrix(h1: np.ndarray, h2: np.ndarray) -> np.ndarray:
    n1 = h1 / np.linalg.norm(h1, axis=-1, keepdims=True)
    n2 = h2 / np.linalg.norm(h2, axis=-1, keepdims=True)
    return n1 @ n2.T


def infonce_per_anchor(h1: np.ndarray, h2: np.ndarray, cfg: LossConfig) -> np.ndarray:
    """Per-anchor contrastive losses; positives sit on the diagonal."""
    h1 = np.asarray(h1, dtype=float)
    h2 = np.asarray(h2, dtype=float)
    if h1.shape != h2.shape or h1.ndim != 2:
        raise ValueError("anchor and candidate batches must both be (B, d)")
    if h1.shape[0] < 2:
        raise ValueError("contrastive loss needs a batch of at least 2")
    _check_nonzero(h1, "anchor")
    _check_nonzero(h2, "candidate")
    logits = _cosine_matrix(h1, h2) / cfg.temperature

    def direction(lg: np.ndarray) -> np.ndarray:
        m = lg.max(axis=-1, keepdims=True)
        lse = m.squeeze(-1) + np.log(np.exp(lg - m).sum(axis=-1))
        return lse - np.diagonal(lg)

    loss = direction(logits)
    if cfg.symmetric:
        loss = 0.5 * (loss + direction(logits.T))
    return loss


def infonce_loss(h1: np.ndarray, h2: np.ndarray, cfg: LossConfig) -> float:
    """Mean per-anchor contrastive loss (unweighted)."""
    return float(infonce_per_anchor(h1, h2, cfg).mean())


def infonce_batch(h1: Tensor, h2: Tensor, cfg: LossConfig) -> Tensor:
    """Differentiable per-anchor contrastive losses as a (B,) Tensor."""
    B = h1.shape[0]
    if B < 2:
        raise ValueError("contrastive loss needs a batch of at least 2")
    _check_nonzero(h1.data, "anchor")
    _check_nonzero(h2.data, "candidate")

    def normalize(h: Tensor) -> Tensor:
        sq = ad.sum_(ad.mul(h, h), axis=-1, keepdims=True)
        return ad.mul(h, ad.power(sq, -0.5))

    n1 = normalize(h1)
    n2 = normalize(h2)
    logits = ad.mul_const(ad.matmul(n1, ad.transpose(n2, (1, 0))), 1.0 / cfg.temperature)
    diag = (np.arange(B), np.arange(B))
    loss = ad.neg(ad.take_at(ad.log_softmax(logits), diag))
    if cfg.symmetric:
        loss_t = ad.neg(ad.take_at(ad.log_softmax(ad.transpose(logits, (1, 0))), diag))
        loss = ad.mul_const(ad.add(loss, loss_t), 0.5)
    return loss


# --- total objective ---


def total_loss(
    rec_losses: Sequence[float],
    cl_losses: Sequence[float] | None,
    weights: Sequence[float],
    cfg: LossConfig,
) -> float:
    """sum_u w_u * (rec_u + cl_weight * cl_u), divided by the batch size.

    Compensated summation keeps the result independent of batch ordering.
    """
    rec_losses = list(rec_losses)
    weights = list(weights)
    if cl_losses is None:
        cl_losses = [0.0] * len(rec_losses)
    cl_losses = list(cl_losses)
    if not len(rec_losses) == len(cl_losses) == len(weights):
        raise ValueError("loss and weight vectors must have equal length")
    if not rec_losses:
        raise ValueError("empty batch")
    terms = [
        w * (r + cfg.cl_weight * c) for w, r, c in zip(weights, rec_losses, cl_losses)
    ]
    return math.fsum(terms) / len(terms)


def total_loss_batch(
    rec_vec: Tensor, cl_vec: Tensor | None, weights: np.ndarray, cfg: LossConfig
) -> Tensor:
    """Differentiable weighted batch objective (scalar Tensor)."""
    weights = np.asarray(weights, dtype=float)
    term = rec_vec
    if cl_vec is not None and cfg.cl_weight != 0.0:
        term = ad.add(rec_vec, ad.mul_const(cl_vec, cfg.cl_weight))
    weighted = ad.mul_const(term, weights)
    return ad.mul_const(ad.sum_(weighted), 1.0 / len(weights))
