"""Seq2seq translation models for category-aware sequential recommendation.

Thin wrapper over the C++ core. The main operations:

    synth_dataset / synth_tsv   generate category-walk benchmarks
    prepare_tsv / load_split    ingest and split interaction logs
    train                       fit a variant, returns (checkpoint, history)
    evaluate                    Hit@n / NDCG@n against sampled negatives
    category_metrics            next-category ranking over the full catalog
    bayes_oracle                exact ceiling for a generated benchmark
    gradcheck                   finite-difference gradient audit
"""

from seqtrans._core import (
    Checkpoint,
    SplitDataset,
    bayes_oracle,
    category_metrics,
    evaluate,
    gradcheck,
    load_checkpoint,
    load_split,
    prepare_tsv,
    score_candidates,
    synth_dataset,
    synth_tsv,
    train,
    variants,
    __version__,
)

__all__ = [
    "Checkpoint",
    "SplitDataset",
    "bayes_oracle",
    "category_metrics",
    "evaluate",
    "gradcheck",
    "load_checkpoint",
    "load_split",
    "prepare_tsv",
    "score_candidates",
    "synth_dataset",
    "synth_tsv",
    "train",
    "variants",
    "__version__",
]
