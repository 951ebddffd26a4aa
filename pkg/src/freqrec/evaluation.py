"""Full-catalog ranking metrics, frequency-binned breakdowns, and the
augmentation drop audit.

Ranking is over the entire item set with no negative sampling. Ties break
toward the smaller item index so ranks are deterministic. The drop audit
measures, per item-frequency bin, how often an occurrence of a bin member is
removed by the drop operator under a uniform versus an adaptive policy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import model as M
from .augment import AugmentationConfig, _keep_mask, perturb_probs
from .corpus import Corpus, FrequencyBins, FrequencyTable
from .rng import DOMAIN_AUDIT, RngStream


@dataclass(frozen=True)
class RankedResult:
    user: str
    target: int
    rank: int   # 1-based position among all items


def rank_target(h_u: np.ndarray, params: M.ModelParams, target: int) -> int:
    """1 + number of items scoring strictly higher, plus equal-scoring items
    with a smaller index."""
    scores = np.asarray(h_u, dtype=float) @ params["item_emb"].data.T
    s_t = scores[target]
    higher = int((scores > s_t).sum())
    tied_before = int(((scores == s_t) & (np.arange(len(scores)) < target)).sum())
    return 1 + higher + tied_before


def rank_targets_batch(
    H: np.ndarray, item_emb: np.ndarray, targets: np.ndarray
) -> np.ndarray:
    scores = H @ item_emb.T
    B, V = scores.shape
    s_t = scores[np.arange(B), targets]
    higher = (scores > s_t[:, None]).sum(axis=1)
    tied_before = ((scores == s_t[:, None]) & (np.arange(V)[None, :] < targets[:, None])).sum(axis=1)
    return 1 + higher + tied_before


def hr_at_k(ranks: Iterable[int], k: int) -> float:
    """Fraction of instances whose target ranks within the top k."""
    ranks = list(ranks)
    if k < 1:
        raise ValueError("k must be >= 1")
    if not ranks:
        raise ValueError("no ranks to evaluate")
    return sum(1 for r in ranks if r <= k) / len(ranks)


def ndcg_at_k(ranks: Iterable[int], k: int) -> float:
    """Mean of 1/log2(rank + 1) for ranks within k, else 0 (single relevant item)."""
    ranks = list(ranks)
    if k < 1:
        raise ValueError("k must be >= 1")
    if not ranks:
        raise ValueError("no ranks to evaluate")
    return sum(1.0 / math.log2(r + 1) if r <= k else 0.0 for r in ranks) / len(ranks)


def evaluate_pairs(
    params: M.ModelParams,
    config: M.ModelConfig,
    pairs: Sequence[tuple[tuple[int, ...], int]] | Sequence,
    batch_size: int = 512,
) -> list[RankedResult]:
    """Rank each pair's target after encoding its input prefix (eval mode).

    Pairs are (input items, target) in dense indices, optionally with a
    leading user field.
    """
    norm: list[tuple[str, tuple[int, ...], int]] = []
    for p in pairs:
        if len(p) == 3:
            norm.append((str(p[0]), tuple(p[1]), int(p[2])))
        else:
            norm.append(("", tuple(p[0]), int(p[1])))
    results: list[RankedResult] = []
    emb = params["item_emb"].data
    for lo in range(0, len(norm), batch_size):
        chunk = norm[lo : lo + batch_size]
        inputs = [c[1][-config.max_len :] for c in chunk]
        targets = np.array([c[2] for c in chunk], dtype=int)
        idx, lengths = M.pad_batch(inputs)
        h = M.encode_batch(M.embed_batch(idx, params), lengths, params, config, "eval")
        ranks = rank_targets_batch(h.data, emb, targets)
        for (user, _, target), r in zip(chunk, ranks):
            results.append(RankedResult(user=user, target=target, rank=int(r)))
    return results


def metrics_from_ranks(ranks: Sequence[int], ks: Sequence[int] = (5, 10)) -> dict[str, float]:
    out = {}
    for k in ks:
        out[f"hr@{k}"] = hr_at_k(ranks, k)
        out[f"ndcg@{k}"] = ndcg_at_k(ranks, k)
    return out


@dataclass(frozen=True)
class BinMetrics:
    label: str
    count: int
    hr10: float | None     # None when the bin is empty, never a fake zero
    ndcg10: float | None


@dataclass(frozen=True)
class EvalReport:
    overall: Mapping[str, float]
    item_bins: tuple[BinMetrics, ...]
    user_bins: tuple[BinMetrics, ...]


def _bin_rows(
    groups: Mapping[int, list[int]], bins: FrequencyBins
) -> tuple[BinMetrics, ...]:
    rows = []
    for b in range(bins.num_bins):
        ranks = groups.get(b, [])
        if ranks:
            rows.append(BinMetrics(bins.labels[b], len(ranks), hr_at_k(ranks, 10), ndcg_at_k(ranks, 10)))
        else:
            rows.append(BinMetrics(bins.labels[b], 0, None, None))
    return tuple(rows)


def binned_metrics(
    results: Sequence[RankedResult],
    item_bins: FrequencyBins,
    user_bins: FrequencyBins,
    freq: FrequencyTable,
    user_lengths: Mapping[str, int],
    ks: Sequence[int] = (5, 10),
) -> EvalReport:
    """Overall metrics plus HR@10/NDCG@10 within each target-frequency bin
    and each user-length bin.

    Items absent from the training split count as frequency 0. The user
    frequency proxy is the training sequence length.
    """
    ranks = [r.rank for r in results]
    by_item: dict[int, list[int]] = {}
    by_user: dict[int, list[int]] = {}
    for r in results:
        bi = item_bins.bin_of(freq.get(r.target, 0))
        by_item.setdefault(bi, []).append(r.rank)
        bu = user_bins.bin_of(user_lengths.get(r.user, 0))
        by_user.setdefault(bu, []).append(r.rank)
    return EvalReport(
        overall=metrics_from_ranks(ranks, ks),
        item_bins=_bin_rows(by_item, item_bins),
        user_bins=_bin_rows(by_user, user_bins),
    )


@dataclass(frozen=True)
class AuditRow:
    bin_label: str
    operator: str
    expected_rate: float
    observed_rate: float
    occurrences: int
    trials: int


def drop_audit(
    corpus: Corpus,
    freq: FrequencyTable,
    bins: FrequencyBins,
    cfg: AugmentationConfig,
    policy: str = "adaptive",
    trials: int = 100_000,
    seed: int = 0,
) -> list[AuditRow]:
    """Empirical per-bin probability that an item occurrence is dropped.

    Each trial applies the drop operator to one sequence (cycling through
    the corpus deterministically). The expected rate per bin is the mean
    perturbation probability over that bin's occurrences, ignoring the
    none-survive guard, whose effect is negligible at realistic lengths.
    """
    if trials < 1000:
        raise ValueError("audit needs at least 1000 trials")
    if policy not in ("adaptive", "uniform"):
        raise ValueError("policy must be 'adaptive' or 'uniform'")
    eff_cfg = AugmentationConfig(
        gamma=cfg.gamma,
        eta=cfg.eta,
        cap_multiplier=cfg.cap_multiplier,
        max_resamples=cfg.max_resamples,
        correlation_top_k=cfg.correlation_top_k,
        correlation_window=cfg.correlation_window,
        policy=policy,
        len_aware=False,
    )
    seq_probs = []
    seq_bins = []
    for s in corpus.sequences:
        probs = perturb_probs(s.items, freq, eff_cfg)
        seq_probs.append(probs)
        seq_bins.append(np.array([bins.bin_of(freq.get(i, 0)) for i in s.items]))
    nbins = bins.num_bins
    drops = np.zeros(nbins)
    occ = np.zeros(nbins, dtype=int)
    expected = np.zeros(nbins)
    gen = RngStream(seed, DOMAIN_AUDIT).generator()
    n_seq = len(corpus.sequences)
    for t in range(trials):
        i = t % n_seq
        keep = _keep_mask(seq_probs[i], gen)
        dropped_bins = seq_bins[i][~keep]
        if len(dropped_bins):
            drops += np.bincount(dropped_bins, minlength=nbins)
        occ += np.bincount(seq_bins[i], minlength=nbins)
        expected += np.bincount(seq_bins[i], weights=seq_probs[i], minlength=nbins)
    rows = []
    for b in range(nbins):
        if occ[b] == 0:
            continue
        rows.append(
            AuditRow(
                bin_label=bins.labels[b],
                operator="drop",
                expected_rate=float(expected[b] / occ[b]),
                observed_rate=float(drops[b] / occ[b]),
                occurrences=int(occ[b]),
                trials=trials,
            )
        )
    return rows
