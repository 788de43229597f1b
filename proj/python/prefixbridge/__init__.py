# SPDX-License-Identifier: Apache-2.0
"""Prefix-conditioned report generation from image embeddings."""

from ._core import (
    ConfigError,
    DimensionError,
    Error,
    FormatError,
    InvalidInputError,
    Model,
    VersionError,
    __version__,
    corpus_bleu,
    finding_names,
    fnv1a64,
    preprocess_report,
    run,
    split_tokens,
)

__all__ = [
    "ConfigError",
    "DimensionError",
    "Error",
    "FormatError",
    "InvalidInputError",
    "Model",
    "VersionError",
    "__version__",
    "corpus_bleu",
    "finding_names",
    "fnv1a64",
    "preprocess_report",
    "run",
    "split_tokens",
]
