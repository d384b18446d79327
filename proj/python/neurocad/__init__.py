"""Voxel-based CNN assessment of CAD models for automated assembly."""

from neurocad._core import (
    Dataset,
    NeurocadError,
    ParseError,
    assess,
    cost,
    decode_score,
    encode_score,
    evaluate,
    fit_line,
    invariants,
    network_layout,
    parameter_count,
    procedural_stl,
    read_binvox,
    slenderness_score,
    train,
    voxelize,
    write_binvox,
)

__all__ = [
    "Dataset",
    "NeurocadError",
    "ParseError",
    "assess",
    "cost",
    "decode_score",
    "encode_score",
    "evaluate",
    "fit_line",
    "invariants",
    "network_layout",
    "parameter_count",
    "procedural_stl",
    "read_binvox",
    "slenderness_score",
    "train",
    "voxelize",
    "write_binvox",
]
