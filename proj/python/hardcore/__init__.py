# SPDX-License-Identifier: Apache-2.0
"""Python interface to the HARDCORE core-loss model."""

from ._core import (
    DEFAULT_TOPOLOGY,
    SEQUENCE_LENGTH,
    DataError,
    Dataset,
    Model,
    NumericError,
    Record,
    area_error_stats,
    classify_waveform,
    cross_validate,
    load_material,
    load_model,
    parameter_count,
    pareto_frontier,
    relative_error_stats,
    shoelace_power,
    synthetic_dataset,
    train,
)

__all__ = [
    "DEFAULT_TOPOLOGY",
    "SEQUENCE_LENGTH",
    "DataError",
    "Dataset",
    "Model",
    "NumericError",
    "Record",
    "area_error_stats",
    "classify_waveform",
    "cross_validate",
    "load_material",
    "load_model",
    "parameter_count",
    "pareto_frontier",
    "relative_error_stats",
    "shoelace_power",
    "synthetic_dataset",
    "train",
]
