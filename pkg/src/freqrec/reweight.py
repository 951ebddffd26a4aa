"""Per-sequence training weights from item rarity and sequence sparsity.

A sequence whose items are rarer than average, or which is shorter than
average, receives a weight above 1; the exponent beta controls how sharply.
beta = 0 turns reweighting off exactly (every weight is 1.0).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import CorpusStats, FrequencyTable


@dataclass(frozen=True)
class ReweightConfig:
    beta: float = 0.1
    clip_min: float | None = 0.1
    clip_max: float | None = 10.0
    normalize: bool = False   # divide a batch by its mean weight; off by default

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.clip_min is not None and self.clip_max is not None and self.clip_min > self.clip_max:
            raise ValueError("clip_min must not exceed clip_max")


def sequence_avg_frequency(seq: Sequence[int], freq: FrequencyTable) -> float:
    """Mean global count over the sequence's positions; duplicates each count."""
    if len(seq) == 0:
        raise ValueError("sequence must be non-empty")
    return sum(freq[item] for item in seq) / len(seq)


def sequence_weight(
    seq: Sequence[int], freq: FrequencyTable, stats: CorpusStats, cfg: ReweightConfig
) -> float:
    """((global_avg_freq / seq_avg_freq) * (global_avg_len / len))^beta, clipped.

    The weight is applied raw, with no batch normalization, unless the
    normalize flag is used downstream. Clipping guards against extreme
    weights from length-1 rare-item sequences; the default bounds do not
    bind for beta values up to 0.2 on realistic corpora.
    """
    if cfg.beta == 0.0:
        return 1.0
    avg = sequence_avg_frequency(seq, freq)
    base = (stats.global_avg_frequency / avg) * (stats.global_avg_length / len(seq))
    w = base ** cfg.beta
    if cfg.clip_min is not None:
        w = max(w, cfg.clip_min)
    if cfg.clip_max is not None:
        w = min(w, cfg.clip_max)
    return w


def batch_weights(
    seqs: Sequence[Sequence[int]],
    freq: FrequencyTable,
    stats: CorpusStats,
    cfg: ReweightConfig | None,
) -> np.ndarray:
    """Weights for a batch; a None config means reweighting is disabled."""
    if cfg is None:
        return np.ones(len(seqs))
    w = np.array([sequence_weight(s, freq, stats, cfg) for s in seqs])
    if cfg.normalize and len(w) > 0:
        w = w / w.mean()
    return w


def weight_histogram(weights: Sequence[float], bucket_width: float = 0.25) -> list[tuple[str, int]]:
    """Fixed-width buckets of the weight distribution for the stats dump."""
    if bucket_width <= 0:
        raise ValueError("bucket_width must be positive")
    buckets: dict[int, int] = {}
    for w in weights:
        buckets[int(np.floor(w / bucket_width))] = buckets.get(int(np.floor(w / bucket_width)), 0) + 1
    rows = []
    for b in sorted(buckets):
        lo = b * bucket_width
        rows.append((f"[{lo:.2f},{lo + bucket_width:.2f})", buckets[b]))
    return rows
