"""Frequency-adaptive sequence augmentation.

Two views of a training sequence are produced per step, each by one
subsequence-oriented operator (crop or reorder, applied to an
acceptance-sampled contiguous span) followed by one item-oriented operator
(drop, substitute, or insert, applied with per-item probabilities).

Adaptive policy: an item's perturbation probability scales with its global
count relative to the average count within the current sequence, so rare
items are perturbed less while the expected perturbed fraction stays at the
target ratio. The probability is capped at cap_multiplier times the target
ratio, then clamped to [0, 1]. Span sampling is accepted with probability
proportional to the span's minimum item count over the global average count,
re-sampling on rejection.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .corpus import Corpus, CorpusStats, FrequencyTable, build_frequency_table
from .rng import RngStream

POLICIES = ("adaptive", "uniform")
SUBSEQ_OPS = ("crop", "reorder")
ITEM_OPS = ("drop", "substitute", "insert")


@dataclass(frozen=True)
class AugmentationConfig:
    gamma: float = 0.3            # target perturbation ratio
    eta: float = 0.3              # span length ratio
    cap_multiplier: float = 2.0   # per-item probability cap, in units of gamma
    max_resamples: int = 20       # rejection-sampling guard
    correlation_top_k: int = 20
    correlation_window: int = 5
    policy: str = "adaptive"      # "adaptive" or "uniform"
    len_aware: bool = False       # scale probabilities by relative sequence length

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError("eta must be in (0, 1]")
        if self.cap_multiplier < 1.0:
            raise ValueError("cap_multiplier must be >= 1")
        if self.max_resamples < 1:
            raise ValueError("max_resamples must be >= 1")
        if self.correlation_top_k < 1 or self.correlation_window < 2:
            raise ValueError("correlation_top_k >= 1 and correlation_window >= 2 required")
        if self.policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}")


class Span(NamedTuple):
    """A contiguous slice of a sequence: 0-based start plus the items."""

    start: int
    items: tuple[int, ...]


@dataclass(frozen=True)
class ViewProvenance:
    subseq_op: str
    span_start: int
    span_len: int
    item_op: str
    positions: tuple[int, ...]    # perturbed indices in the intermediate sequence


@dataclass(frozen=True)
class AugmentedViewPair:
    view1: tuple[int, ...]
    view2: tuple[int, ...]
    provenance: tuple[ViewProvenance, ViewProvenance]

    def __post_init__(self):
        if len(self.view1) == 0 or len(self.view2) == 0:
            raise ValueError("augmented views must be non-empty")


# --- per-item perturbation probabilities ---


def item_perturb_prob(
    item: int, freq: FrequencyTable, seq_avg_freq: float, cfg: AugmentationConfig
) -> float:
    """min(gamma * f(item) / seq_avg_freq, cap_multiplier * gamma), clamped to [0, 1]."""
    if seq_avg_freq <= 0:
        raise ValueError("seq_avg_freq must be positive")
    scaled = cfg.gamma * freq[item] / seq_avg_freq
    return min(scaled, cfg.cap_multiplier * cfg.gamma, 1.0)


def len_aware_item_perturb_prob(
    item: int,
    freq: FrequencyTable,
    seq_avg_freq: float,
    seq_len: int,
    stats: CorpusStats,
    cfg: AugmentationConfig,
) -> float:
    """Ablation variant: the capped probability is further scaled by the
    sequence's length relative to the global average, then clamped."""
    base = item_perturb_prob(item, freq, seq_avg_freq, cfg)
    return min(base * seq_len / stats.global_avg_length, 1.0)


def perturb_probs(
    seq: Sequence[int],
    freq: FrequencyTable,
    cfg: AugmentationConfig,
    stats: CorpusStats | None = None,
    orig_len: int | None = None,
) -> np.ndarray:
    """Per-position perturbation probabilities under the configured policy.

    The adaptive policy uses the mean count over this sequence's occurrences.
    With len_aware set, probabilities are scaled by orig_len (the length of
    the sequence the views are derived from) over the global average length.
    """
    n = len(seq)
    if n == 0:
        raise ValueError("sequence must be non-empty")
    if cfg.policy == "uniform":
        return np.full(n, min(cfg.gamma, 1.0))
    counts = np.array([freq[item] for item in seq], dtype=float)
    avg = counts.mean()
    probs = np.minimum(cfg.gamma * counts / avg, cfg.cap_multiplier * cfg.gamma)
    if cfg.len_aware:
        if stats is None or orig_len is None:
            raise ValueError("len_aware probabilities need corpus stats and the source length")
        probs = probs * (orig_len / stats.global_avg_length)
    return np.minimum(probs, 1.0)


# --- item-oriented operators ---
# A position is perturbed iff its uniform draw is strictly below its
# probability, so probability 0 can never perturb and probability 1 always does.


def _keep_mask(probs: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    """Survival mask for drop; if nothing would survive, the final (most
    recent) item is retained so the encoder never sees an empty sequence."""
    keep = gen.random(len(probs)) >= probs
    if not keep.any():
        keep[-1] = True
    return keep


def op_drop(seq: Sequence[int], probs: np.ndarray, gen: np.random.Generator) -> tuple[int, ...]:
    keep = _keep_mask(np.asarray(probs, dtype=float), gen)
    return tuple(item for item, k in zip(seq, keep) if k)


def op_substitute(
    seq: Sequence[int],
    probs: np.ndarray,
    corr: "CorrelationIndex",
    gen: np.random.Generator,
) -> tuple[int, ...]:
    """Replace selected items with a uniformly sampled top-k neighbor; items
    without neighbors are left alone. Length is unchanged."""
    draws = gen.random(len(seq))
    out = []
    for item, p, z in zip(seq, probs, draws):
        if z < p:
            neighbors = corr.neighbors_of(item)
            if neighbors:
                item = neighbors[gen.integers(len(neighbors))][0]
        out.append(item)
    return tuple(out)


def op_insert(
    seq: Sequence[int],
    probs: np.ndarray,
    corr: "CorrelationIndex",
    gen: np.random.Generator,
    max_len: int | None = None,
) -> tuple[int, ...]:
    """Insert a sampled neighbor immediately after each selected item.

    If the interleaved result exceeds max_len it is suffix-truncated,
    matching the corpus truncation rule.
    """
    draws = gen.random(len(seq))
    out = []
    for item, p, z in zip(seq, probs, draws):
        out.append(item)
        if z < p:
            neighbors = corr.neighbors_of(item)
            if neighbors:
                out.append(neighbors[gen.integers(len(neighbors))][0])
    if max_len is not None and len(out) > max_len:
        out = out[-max_len:]
    return tuple(out)


# --- subsequence-oriented operators ---


def sample_subsequence(
    seq: Sequence[int], cfg: AugmentationConfig, gen: np.random.Generator
) -> Span:
    """A span of length ceil(eta * n) with a uniformly chosen start."""
    n = len(seq)
    if n == 0:
        raise ValueError("sequence must be non-empty")
    c = min(math.ceil(cfg.eta * n), n)
    start = int(gen.integers(0, n - c + 1))
    return Span(start=start, items=tuple(seq[start : start + c]))


def subsequence_accept_prob(
    span: Sequence[int], freq: FrequencyTable, stats: CorpusStats
) -> float:
    """min over span of f(item), over the global average count, capped at 1.

    Unlike the per-item probabilities this uses the global average, so spans
    whose rarest member is at least averagely frequent are always accepted.
    """
    if len(span) == 0:
        raise ValueError("span must be non-empty")
    f_min = min(freq[item] for item in span)
    return min(f_min / stats.global_avg_frequency, 1.0)


def len_aware_accept_prob(
    span: Sequence[int], freq: FrequencyTable, stats: CorpusStats, seq_len: int
) -> float:
    """Ablation variant: acceptance scaled by relative sequence length."""
    base = subsequence_accept_prob(span, freq, stats)
    return min(base * seq_len / stats.global_avg_length, 1.0)


def accepted_subsequence(
    seq: Sequence[int],
    cfg: AugmentationConfig,
    freq: FrequencyTable,
    stats: CorpusStats,
    gen: np.random.Generator,
    orig_len: int | None = None,
) -> Span:
    """Rejection-sample spans until one is accepted.

    Acceptance can be arbitrarily rare (a span containing an ultra-rare item
    has probability near zero), so after max_resamples attempts the
    highest-acceptance span seen so far is returned instead of looping
    forever. Under the uniform policy the first sample is returned as-is.
    """
    first = sample_subsequence(seq, cfg, gen)
    if cfg.policy == "uniform":
        return first
    best = first
    best_alpha = -1.0
    span = first
    for _ in range(cfg.max_resamples):
        if cfg.len_aware:
            if orig_len is None:
                raise ValueError("len_aware acceptance needs the source sequence length")
            alpha = len_aware_accept_prob(span.items, freq, stats, orig_len)
        else:
            alpha = subsequence_accept_prob(span.items, freq, stats)
        if alpha > best_alpha:
            best, best_alpha = span, alpha
        if gen.random() < alpha:
            return span
        span = sample_subsequence(seq, cfg, gen)
    return best


def op_crop(seq: Sequence[int], span: Span) -> tuple[int, ...]:
    """The view is the span itself."""
    return tuple(span.items)


def op_reorder(seq: Sequence[int], span: Span, gen: np.random.Generator) -> tuple[int, ...]:
    """Uniformly permute the span in place; the rest is untouched."""
    shuffled = list(span.items)
    perm = gen.permutation(len(shuffled))
    shuffled = [span.items[i] for i in perm]
    out = list(seq)
    out[span.start : span.start + len(shuffled)] = shuffled
    return tuple(out)


# --- correlation index for substitute / insert ---


class CorrelationIndex:
    """Top-k correlated neighbors per item.

    The score between two items is their co-occurrence count within a sliding
    window of the configured width across training sequences, normalized by
    sqrt(f(a) * f(b)). Only the top-k list per item is stored, which keeps the
    index linear in the vocabulary instead of quadratic.
    """

    FORMAT_HEADER = "freqrec-correlation v1"

    __slots__ = ("neighbors",)

    def __init__(self, neighbors: Mapping[int, Sequence[tuple[int, float]]]):
        cleaned: dict[int, tuple[tuple[int, float], ...]] = {}
        for item, lst in neighbors.items():
            lst = tuple((int(b), float(s)) for b, s in lst)
            if any(b == item for b, _ in lst):
                raise ValueError(f"item {item} listed as its own neighbor")
            scores = [s for _, s in lst]
            if any(scores[i] < scores[i + 1] for i in range(len(scores) - 1)):
                raise ValueError(f"item {item}: neighbor scores must be non-increasing")
            cleaned[item] = lst
        self.neighbors = cleaned

    def neighbors_of(self, item: int) -> tuple[tuple[int, float], ...]:
        return self.neighbors.get(item, ())

    def save(self, path: str | Path) -> None:
        lines = [self.FORMAT_HEADER]
        for item in sorted(self.neighbors):
            entries = " ".join(f"{b}:{s!r}" for b, s in self.neighbors[item])
            lines.append(f"{item}\t{entries}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "CorrelationIndex":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or lines[0] != cls.FORMAT_HEADER:
            raise ValueError(f"unrecognized correlation index header in {path}")
        neighbors: dict[int, list[tuple[int, float]]] = {}
        for line in lines[1:]:
            if not line:
                continue
            item_s, _, rest = line.partition("\t")
            entries = []
            for tok in rest.split():
                b, _, s = tok.partition(":")
                entries.append((int(b), float(s)))
            neighbors[int(item_s)] = entries
        return cls(neighbors)


def build_correlation_index(train: Corpus, cfg: AugmentationConfig) -> CorrelationIndex:
    """Count windowed co-occurrences and keep the top-k neighbors per item.

    Two positions co-occur when they are less than correlation_window apart
    in the same sequence; self pairs are ignored. Ties break toward the
    smaller item ID for determinism.
    """
    if len(train) == 0:
        raise ValueError("training corpus is empty")
    freq = build_frequency_table(train)
    pair_counts: dict[tuple[int, int], int] = defaultdict(int)
    w = cfg.correlation_window
    for s in train.sequences:
        items = s.items
        n = len(items)
        for i in range(n):
            a = items[i]
            for j in range(i + 1, min(i + w, n)):
                b = items[j]
                if a == b:
                    continue
                pair_counts[(a, b) if a < b else (b, a)] += 1
    scored: dict[int, list[tuple[int, float]]] = defaultdict(list)
    for (a, b), c in pair_counts.items():
        score = c / math.sqrt(freq[a] * freq[b])
        scored[a].append((b, score))
        scored[b].append((a, score))
    neighbors = {}
    for item, lst in scored.items():
        lst.sort(key=lambda e: (-e[1], e[0]))
        neighbors[item] = lst[: cfg.correlation_top_k]
    return CorrelationIndex(neighbors)


# --- view generation (one subsequence op, then one item op, per view) ---


def _one_view(
    seq: Sequence[int],
    freq: FrequencyTable,
    stats: CorpusStats,
    cfg: AugmentationConfig,
    corr: CorrelationIndex,
    gen: np.random.Generator,
    max_len: int | None,
) -> tuple[tuple[int, ...], ViewProvenance]:
    orig_len = len(seq)
    subseq_op = SUBSEQ_OPS[gen.integers(len(SUBSEQ_OPS))]
    item_op = ITEM_OPS[gen.integers(len(ITEM_OPS))]
    span = accepted_subsequence(seq, cfg, freq, stats, gen, orig_len=orig_len)
    if subseq_op == "crop":
        mid = op_crop(seq, span)
    else:
        mid = op_reorder(seq, span, gen)
    # per-item probabilities are recomputed on the intermediate sequence, so
    # the sequence-average count reflects what is actually being perturbed
    probs = perturb_probs(mid, freq, cfg, stats=stats, orig_len=orig_len)
    if item_op == "drop":
        keep = _keep_mask(probs, gen)
        view = tuple(item for item, k in zip(mid, keep) if k)
        positions = tuple(int(i) for i, k in enumerate(keep) if not k)
    elif item_op == "substitute":
        draws = gen.random(len(mid))
        out = []
        positions = []
        for i, (item, p, z) in enumerate(zip(mid, probs, draws)):
            if z < p and corr.neighbors_of(item):
                nb = corr.neighbors_of(item)
                out.append(nb[gen.integers(len(nb))][0])
                positions.append(i)
            else:
                out.append(item)
        view = tuple(out)
        positions = tuple(positions)
    else:
        draws = gen.random(len(mid))
        out = []
        positions = []
        for i, (item, p, z) in enumerate(zip(mid, probs, draws)):
            out.append(item)
            if z < p and corr.neighbors_of(item):
                nb = corr.neighbors_of(item)
                out.append(nb[gen.integers(len(nb))][0])
                positions.append(i)
        if max_len is not None and len(out) > max_len:
            out = out[-max_len:]
        view = tuple(out)
        positions = tuple(positions)
    if not view:
        view = (seq[-1],)
    prov = ViewProvenance(
        subseq_op=subseq_op,
        span_start=span.start,
        span_len=len(span.items),
        item_op=item_op,
        positions=positions,
    )
    return view, prov


def generate_views(
    seq: Sequence[int],
    freq: FrequencyTable,
    stats: CorpusStats,
    cfg: AugmentationConfig,
    corr: CorrelationIndex,
    streams: tuple[RngStream, RngStream],
    max_len: int | None = None,
) -> AugmentedViewPair:
    """Two independently augmented views of one sequence.

    Each view picks its operators uniformly (crop/reorder, then
    drop/substitute/insert) from its own keyed stream, so the pair is
    reproducible from the stream material alone.
    """
    if len(seq) == 0:
        raise ValueError("sequence must be non-empty")
    v1, p1 = _one_view(seq, freq, stats, cfg, corr, streams[0].generator(), max_len)
    v2, p2 = _one_view(seq, freq, stats, cfg, corr, streams[1].generator(), max_len)
    return AugmentedViewPair(view1=v1, view2=v2, provenance=(p1, p2))
