"""Interaction-log ingestion, preprocessing, splitting, and corpus statistics."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence


class ParseError(ValueError):
    """Malformed interaction-log line; carries the 1-based line number."""

    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class EmptyCorpusError(ValueError):
    """A preprocessing fixpoint removed every sequence."""


@dataclass(frozen=True)
class InteractionSequence:
    """One user's chronologically ordered item IDs (earliest first)."""

    user: str
    items: tuple[int, ...]

    def __post_init__(self):
        if len(self.items) == 0:
            raise ValueError(f"user {self.user!r}: empty item list")

    def __len__(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class Corpus:
    sequences: tuple[InteractionSequence, ...]
    vocabulary: frozenset[int]

    @classmethod
    def build(cls, sequences: Iterable[InteractionSequence]) -> "Corpus":
        seqs = tuple(sequences)
        seen = set()
        for s in seqs:
            if s.user in seen:
                raise ValueError(f"duplicate user {s.user!r}")
            seen.add(s.user)
        vocab = frozenset(item for s in seqs for item in s.items)
        return cls(sequences=seqs, vocabulary=vocab)

    def __len__(self) -> int:
        return len(self.sequences)

    @property
    def num_users(self) -> int:
        return len(self.sequences)

    @property
    def num_items(self) -> int:
        return len(self.vocabulary)

    def total_interactions(self) -> int:
        return sum(len(s) for s in self.sequences)


class FrequencyTable:
    """Immutable item -> training-split occurrence count map."""

    __slots__ = ("_counts",)

    def __init__(self, counts: Mapping[int, int]):
        for item, c in counts.items():
            if c < 1:
                raise ValueError(f"item {item}: count must be >= 1, got {c}")
        self._counts = MappingProxyType(dict(counts))

    @property
    def counts(self) -> Mapping[int, int]:
        return self._counts

    def __getitem__(self, item: int) -> int:
        return self._counts[item]

    def get(self, item: int, default: int = 0) -> int:
        return self._counts.get(item, default)

    def __contains__(self, item: int) -> bool:
        return item in self._counts

    def __len__(self) -> int:
        return len(self._counts)

    def items(self):
        return self._counts.items()

    def total(self) -> int:
        return sum(self._counts.values())


@dataclass(frozen=True)
class CorpusStats:
    """Global averages over the training split: mean item count, mean length."""

    global_avg_frequency: float
    global_avg_length: float

    def __post_init__(self):
        if self.global_avg_frequency <= 0 or self.global_avg_length <= 0:
            raise ValueError("corpus statistics must be strictly positive")


@dataclass(frozen=True)
class FrequencyBins:
    """Half-open count intervals: bin i covers [edges[i-1], edges[i]), the
    first bin is unbounded below and the last unbounded above."""

    edges: tuple[int, ...]
    labels: tuple[str, ...]

    def __post_init__(self):
        if any(a >= b for a, b in zip(self.edges, self.edges[1:])):
            raise ValueError("bin edges must be strictly increasing")
        if len(self.labels) != len(self.edges) + 1:
            raise ValueError("need exactly one more label than edges")

    @property
    def num_bins(self) -> int:
        return len(self.labels)

    def bin_of(self, count: int) -> int:
        i = 0
        for edge in self.edges:
            if count < edge:
                return i
            i += 1
        return i

    def label_of(self, count: int) -> str:
        return self.labels[self.bin_of(count)]


@dataclass(frozen=True)
class LabeledPair:
    """An evaluation instance: input prefix plus the held-out target item."""

    user: str
    inputs: tuple[int, ...]
    target: int


@dataclass(frozen=True)
class SplitResult:
    train: Corpus
    valid: tuple[LabeledPair, ...]
    test: tuple[LabeledPair, ...]
    excluded_users: int


def parse_interactions(text: str) -> Corpus:
    """Parse `user<TAB>item( item)*` lines into a Corpus.

    Empty lines are skipped. Malformed lines raise ParseError with the
    1-based line number; duplicate users are rejected.
    """
    sequences = []
    seen_users = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r")
        if not line:
            continue
        if "\t" not in line:
            raise ParseError("missing tab separator", lineno)
        user, _, item_part = line.partition("\t")
        if not user:
            raise ParseError("empty user identifier", lineno)
        tokens = item_part.split()
        if not tokens:
            raise ParseError("empty item list", lineno)
        try:
            items = tuple(int(tok) for tok in tokens)
        except ValueError:
            raise ParseError(f"non-integer item token in {tokens!r}", lineno) from None
        if user in seen_users:
            raise ParseError(f"duplicate user {user!r}", lineno)
        seen_users.add(user)
        sequences.append(InteractionSequence(user=user, items=items))
    return Corpus.build(sequences)


def apply_five_core_filter(corpus: Corpus, min_count: int = 5) -> Corpus:
    """Iterate item- and user-filtering sweeps to a fixpoint.

    After the fixpoint every surviving item occurs >= min_count times and
    every surviving sequence has length >= min_count. A single pass is not
    enough: removing an item can push a user below threshold, whose removal
    can push other items below threshold.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    rows = [(s.user, list(s.items)) for s in corpus.sequences]
    while True:
        counts = Counter(item for _, items in rows for item in items)
        keep = {item for item, c in counts.items() if c >= min_count}
        changed = False
        next_rows = []
        for user, items in rows:
            filtered = [it for it in items if it in keep]
            if len(filtered) != len(items):
                changed = True
            if len(filtered) >= min_count:
                next_rows.append((user, filtered))
            else:
                changed = True
        rows = next_rows
        if not changed:
            break
    if not rows:
        raise EmptyCorpusError(f"five-core filter at min_count={min_count} removed every sequence")
    return Corpus.build(InteractionSequence(u, tuple(items)) for u, items in rows)


def truncate_sequences(corpus: Corpus, max_len: int) -> Corpus:
    """Keep each sequence's most recent max_len items (the suffix)."""
    if max_len < 2:
        raise ValueError("max_len must be >= 2")
    return Corpus.build(
        InteractionSequence(s.user, s.items[-max_len:]) for s in corpus.sequences
    )


def leave_one_out_split(corpus: Corpus) -> SplitResult:
    """Per user: last item is the test target, second-to-last the validation
    target, and everything before those forms the training sequence.

    Users with fewer than 3 items cannot be split; they are excluded and
    counted in the result.
    """
    train_seqs = []
    valid = []
    test = []
    excluded = 0
    for s in corpus.sequences:
        if len(s.items) < 3:
            excluded += 1
            continue
        items = s.items
        train_seqs.append(InteractionSequence(s.user, items[:-2]))
        valid.append(LabeledPair(s.user, items[:-2], items[-2]))
        test.append(LabeledPair(s.user, items[:-1], items[-1]))
    if not train_seqs:
        raise EmptyCorpusError("no user has the minimum 3 interactions required for splitting")
    return SplitResult(
        train=Corpus.build(train_seqs),
        valid=tuple(valid),
        test=tuple(test),
        excluded_users=excluded,
    )


def build_frequency_table(train: Corpus) -> FrequencyTable:
    """Count item occurrences over the training split; duplicates each count."""
    if len(train) == 0:
        raise ValueError("training corpus is empty")
    return FrequencyTable(Counter(item for s in train.sequences for item in s.items))


def corpus_stats(train: Corpus, freq: FrequencyTable) -> CorpusStats:
    """Mean count over distinct vocabulary items and mean training length."""
    avg_freq = freq.total() / len(freq)
    avg_len = train.total_interactions() / len(train)
    return CorpusStats(global_avg_frequency=avg_freq, global_avg_length=avg_len)


def assign_frequency_bins(
    freq: FrequencyTable,
    edges: Sequence[int],
    labels: Sequence[str] | None = None,
) -> FrequencyBins:
    """Build count bins; with no edges everything falls into one bin."""
    edges = tuple(edges)
    if labels is None:
        if len(edges) == 0:
            labels = ("all",)
        elif len(edges) == 2:
            labels = ("low", "medium", "high")
        else:
            labels = tuple(f"bin{i}" for i in range(len(edges) + 1))
    bins = FrequencyBins(edges=edges, labels=tuple(labels))
    # sanity: the table must be fully covered (bin_of is total by construction)
    for item, c in freq.items():
        bins.bin_of(c)
    return bins


def tercile_edges(values: Iterable[int]) -> tuple[int, ...]:
    """Edges at the 1/3 and 2/3 points of the sorted value distribution.

    Collapsed edges (heavily tied distributions) are deduplicated, so the
    result may have fewer than two entries.
    """
    ordered = sorted(values)
    if not ordered:
        raise ValueError("cannot compute terciles of an empty distribution")
    n = len(ordered)
    raw = [ordered[n // 3], ordered[(2 * n) // 3]]
    edges = []
    for e in raw:
        if not edges or e > edges[-1]:
            edges.append(e)
    return tuple(edges)


class ItemVocab:
    """Dense re-indexing of original item IDs, with the sidecar map retained."""

    __slots__ = ("items", "index")

    def __init__(self, items: Iterable[int]):
        self.items = tuple(sorted(set(items)))
        self.index = {orig: i for i, orig in enumerate(self.items)}

    def __len__(self) -> int:
        return len(self.items)

    def encode(self, items: Sequence[int]) -> tuple[int, ...]:
        try:
            return tuple(self.index[i] for i in items)
        except KeyError as exc:
            raise KeyError(f"item {exc.args[0]} not in vocabulary") from None

    def decode(self, dense: Sequence[int]) -> tuple[int, ...]:
        return tuple(self.items[i] for i in dense)

    def to_json(self) -> str:
        return json.dumps({"items": list(self.items)})

    @classmethod
    def from_json(cls, payload: str) -> "ItemVocab":
        return cls(json.loads(payload)["items"])


# --- file I/O (one user per line, `user<TAB>item( item)*`) ---


def read_corpus(path: str | Path) -> Corpus:
    return parse_interactions(Path(path).read_text(encoding="utf-8"))


def write_corpus(corpus: Corpus, path: str | Path) -> None:
    lines = [f"{s.user}\t{' '.join(str(i) for i in s.items)}" for s in corpus.sequences]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def write_pairs(pairs: Sequence[LabeledPair], path: str | Path) -> None:
    """Pairs are stored in corpus format with the target as the last token."""
    lines = [
        f"{p.user}\t{' '.join(str(i) for i in p.inputs)} {p.target}" for p in pairs
    ]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_pairs(path: str | Path) -> tuple[LabeledPair, ...]:
    corpus = read_corpus(path)
    pairs = []
    for s in corpus.sequences:
        if len(s.items) < 2:
            raise ParseError(f"user {s.user!r}: labeled pair needs at least 2 items", 0)
        pairs.append(LabeledPair(s.user, s.items[:-1], s.items[-1]))
    return tuple(pairs)


def write_stats_json(
    stats: CorpusStats, num_users: int, num_items: int, excluded_users: int, path: str | Path
) -> None:
    payload = {
        "global_avg_frequency": stats.global_avg_frequency,
        "global_avg_length": stats.global_avg_length,
        "num_users": num_users,
        "num_items": num_items,
        "excluded_users": excluded_users,
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
