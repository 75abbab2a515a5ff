"""Slot-attention character autoencoder with sparse gates."""

from ._core import (
    BpeError,
    ConfigError,
    MergeTable,
    Model,
    ProbeError,
    TrainingAborted,
    config_snapshot,
    eval_gate,
    hungarian,
    lambda_at,
    open_probability,
    read_attention_tsv,
    toy_corpus,
    train_bpe,
)

__all__ = [
    "BpeError",
    "ConfigError",
    "MergeTable",
    "Model",
    "ProbeError",
    "TrainingAborted",
    "config_snapshot",
    "eval_gate",
    "hungarian",
    "lambda_at",
    "open_probability",
    "read_attention_tsv",
    "toy_corpus",
    "train_bpe",
]
