"""Training orchestration: batching, view generation, weighted loss, Adam.

One training example per user per epoch: the user's training sequence minus
its last item is the encoder input and the last item is the target (an
--all-prefixes mode expands every prefix instead). The sequence weight is
computed over the full training sequence; the contrastive views are
generated from the encoder input, since those are the things being encoded.

Determinism: user shuffling, view generation, and dropout all draw from
streams keyed by (seed, domain, ...), so a given (seed, config, data) triple
fully determines the trajectory, and disabling a component never shifts
another component's draws. With cl_weight = 0 the contrastive machinery is
skipped entirely, which makes the degenerate configuration bit-identical to
plain next-item training.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import model as M
from . import objective as obj
from .augment import AugmentationConfig, CorrelationIndex, generate_views
from .autodiff import NumericalError, Tensor
from .corpus import Corpus, CorpusStats, FrequencyTable, LabeledPair
from .evaluation import evaluate_pairs, ndcg_at_k
from .objective import LossConfig
from .reweight import ReweightConfig, batch_weights
from .rng import DOMAIN_DROPOUT, DOMAIN_SHUFFLE, RngStream, view_stream

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 256
    epochs: int = 50
    patience: int = 10
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float | None = 5.0
    all_prefixes: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (contrastive loss needs a negative)")
        if self.epochs < 1 or self.patience < 0:
            raise ValueError("epochs must be >= 1 and patience >= 0")


class OptimizerState:
    """Adam moments and step counter, shape-matched to the parameters."""

    def __init__(self, params: M.ModelParams):
        self.m = {n: np.zeros_like(t.data) for n, t in params.tensors.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in params.tensors.items()}
        self.step = 0


def adam_step(
    params: M.ModelParams,
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    cfg: TrainConfig,
) -> tuple[M.ModelParams, OptimizerState]:
    """Standard bias-corrected Adam, updating parameters in place."""
    state.step += 1
    t = state.step
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, tensor in params.tensors.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)
        if not np.isfinite(update).all():
            raise NumericalError(name, context="adam update")
        tensor.data -= update
    return params, state


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm and total > 0.0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


@dataclass
class FitResult:
    best_params: M.ModelParams
    best_epoch: int
    best_metric: float
    history: list[dict] = field(default_factory=list)


class Trainer:
    """Holds immutable training context; params/optimizer state are passed in."""

    def __init__(
        self,
        train: Corpus,
        freq: FrequencyTable,
        stats: CorpusStats,
        item_index: dict[int, int],
        model_cfg: M.ModelConfig,
        train_cfg: TrainConfig,
        loss_cfg: LossConfig,
        aug_cfg: AugmentationConfig | None = None,
        corr: CorrelationIndex | None = None,
        reweight_cfg: ReweightConfig | None = None,
    ):
        self.freq = freq
        self.stats = stats
        self.model_cfg = model_cfg
        self.train_cfg = train_cfg
        self.loss_cfg = loss_cfg
        self.aug_cfg = aug_cfg
        self.corr = corr
        self.reweight_cfg = reweight_cfg
        self.contrastive = loss_cfg.cl_weight > 0.0
        if self.contrastive and (aug_cfg is None or corr is None):
            raise ValueError("contrastive training needs an augmentation config and index")
        # instance = (user_index, full train sequence, encoder input, target)
        self.instances: list[tuple[int, tuple[int, ...], tuple[int, ...], int]] = []
        skipped = 0
        for u, s in enumerate(train.sequences):
            dense = tuple(item_index[i] for i in s.items)
            if len(dense) < 2:
                skipped += 1
                continue
            if train_cfg.all_prefixes:
                for t in range(1, len(dense)):
                    self.instances.append((u, dense, dense[:t], dense[t]))
            else:
                self.instances.append((u, dense, dense[:-1], dense[-1]))
        if skipped:
            logger.warning("skipped %d users with training sequences shorter than 2", skipped)
        if not self.instances:
            raise ValueError("no trainable sequences (all shorter than 2 after splitting)")
        self._warned_small_batch = False

    def _batch_loss(
        self,
        batch: list[tuple[int, tuple[int, ...], tuple[int, ...], int]],
        params: M.ModelParams,
        epoch: int,
        batch_index: int,
    ) -> tuple[Tensor, dict]:
        users = [b[0] for b in batch]
        full_seqs = [b[1] for b in batch]
        inputs = [b[2][-self.model_cfg.max_len :] for b in batch]
        targets = np.array([b[3] for b in batch], dtype=int)
        seed = self.train_cfg.seed

        weights = batch_weights(full_seqs, self.freq, self.stats, self.reweight_cfg)

        idx, lengths = M.pad_batch(inputs)
        gen0 = RngStream(seed, DOMAIN_DROPOUT, epoch, batch_index, 0).generator()
        h0 = M.encode_batch(
            M.embed_batch(idx, params), lengths, params, self.model_cfg, "train", gen0
        )
        rec_vec = obj.rec_loss_batch(h0, params["item_emb"], targets)

        cl_vec = None
        if self.contrastive:
            pairs = [
                generate_views(
                    inp,
                    self.freq,
                    self.stats,
                    self.aug_cfg,
                    self.corr,
                    (view_stream(seed, u, epoch, 1), view_stream(seed, u, epoch, 2)),
                    max_len=self.model_cfg.max_len,
                )
                for u, inp in zip(users, inputs)
            ]
            views = [p.view1 for p in pairs] + [p.view2 for p in pairs]
            vidx, vlengths = M.pad_batch(views)
            gen1 = RngStream(seed, DOMAIN_DROPOUT, epoch, batch_index, 1).generator()
            H = M.encode_batch(
                M.embed_batch(vidx, params), vlengths, params, self.model_cfg, "train", gen1
            )
            B = len(batch)
            h1 = ad.take_at(H, (np.arange(B),))
            h2 = ad.take_at(H, (np.arange(B, 2 * B),))
            cl_vec = obj.infonce_batch(h1, h2, self.loss_cfg)

        total = obj.total_loss_batch(rec_vec, cl_vec, weights, self.loss_cfg)
        info = {
            "rec": float(rec_vec.data.mean()),
            "cl": float(cl_vec.data.mean()) if cl_vec is not None else 0.0,
            "total": total.item(),
            "lambda": float(weights.mean()),
            "count": len(batch),
        }
        return total, info

    def train_epoch(
        self, params: M.ModelParams, state: OptimizerState, epoch: int
    ) -> dict:
        """One pass over the shuffled instances; returns mean loss components."""
        order = (
            RngStream(self.train_cfg.seed, DOMAIN_SHUFFLE, epoch)
            .generator()
            .permutation(len(self.instances))
        )
        bs = self.train_cfg.batch_size
        sums = {"rec": 0.0, "cl": 0.0, "total": 0.0, "lambda": 0.0}
        count = 0
        batches = 0
        for batch_index, lo in enumerate(range(0, len(order), bs)):
            sel = order[lo : lo + bs]
            if len(sel) < 2:
                if not self._warned_small_batch:
                    logger.warning("skipping batch of size %d (need >= 2)", len(sel))
                    self._warned_small_batch = True
                continue
            batch = [self.instances[i] for i in sel]
            total, info = self._batch_loss(batch, params, epoch, batch_index)
            grads = M.backward(total, params)
            if self.train_cfg.clip_norm is not None:
                clip_gradients(grads, self.train_cfg.clip_norm)
            adam_step(params, grads, state, self.train_cfg)
            for key in ("rec", "cl", "total", "lambda"):
                sums[key] += info[key] * info["count"]
            count += info["count"]
            batches += 1
        if batches == 0:
            raise ValueError("epoch produced no trainable batches")
        return {
            "epoch": epoch,
            "rec_loss": sums["rec"] / count,
            "cl_loss": sums["cl"] / count,
            "total": sums["total"] / count,
            "mean_lambda": sums["lambda"] / count,
        }

    def fit(
        self,
        params: M.ModelParams,
        valid_pairs: Sequence[tuple[tuple[int, ...], int]],
        state: OptimizerState | None = None,
    ) -> FitResult:
        """Train with early stopping on validation NDCG@10.

        The epoch with the best (strictly greater) validation NDCG@10 is kept;
        training stops once the count of consecutive non-improving epochs
        exceeds the patience (patience 0 stops right after the first epoch
        that fails to improve).
        """
        if state is None:
            state = OptimizerState(params)
        best_params = params.copy()
        best_metric = -np.inf
        best_epoch = -1
        bad_streak = 0
        history: list[dict] = []
        for epoch in range(self.train_cfg.epochs):
            t0 = time.perf_counter()
            entry = self.train_epoch(params, state, epoch)
            results = evaluate_pairs(params, self.model_cfg, valid_pairs)
            metric = ndcg_at_k([r.rank for r in results], 10)
            entry["valid_ndcg10"] = metric
            entry["seconds"] = time.perf_counter() - t0
            history.append(entry)
            if metric > best_metric:
                best_metric = metric
                best_epoch = epoch
                best_params = params.copy()
                bad_streak = 0
            else:
                bad_streak += 1
                if bad_streak > self.train_cfg.patience:
                    break
        return FitResult(
            best_params=best_params,
            best_epoch=best_epoch,
            best_metric=best_metric,
            history=history,
        )
