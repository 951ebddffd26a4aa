"""Frequency-aware contrastive learning for sequential recommendation.

The package trains a small causal self-attention next-item model with a
contrastive objective whose data augmentation adapts to item frequency:
rare items are perturbed less, spans containing rare items are accepted
less often for crop/reorder, and sequences dominated by rare items or short
histories receive larger training weights. Evaluation reports full-catalog
HR@K / NDCG@K overall and per frequency bin, plus a Monte Carlo audit of
how augmentation treats each frequency bin.
"""

from .augment import (
    AugmentationConfig,
    AugmentedViewPair,
    CorrelationIndex,
    build_correlation_index,
    generate_views,
)
from .corpus import (
    Corpus,
    CorpusStats,
    FrequencyBins,
    FrequencyTable,
    InteractionSequence,
    ItemVocab,
    LabeledPair,
    apply_five_core_filter,
    assign_frequency_bins,
    build_frequency_table,
    corpus_stats,
    leave_one_out_split,
    parse_interactions,
    truncate_sequences,
)
from .config import RunConfig
from .model import ModelConfig, ModelParams, init_params
from .objective import LossConfig, infonce_loss, rec_loss, total_loss
from .reweight import ReweightConfig, sequence_avg_frequency, sequence_weight
from .rng import RngStream
from .synth import SyntheticSpec, generate_synthetic
from .trainer import TrainConfig, Trainer, adam_step

__version__ = "0.1.0"
