"""Attention-gated U-Net saliency detection."""

from ._salfau import (
    ConfigError,
    ContractError,
    IoError,
    Network,
    ParseError,
    ShapeError,
    bce_sum,
    e_measure,
    gen_synthetic,
    mae,
    max_f_beta,
    read_image,
    run_cli,
    s_measure,
    shape_plan,
    write_pgm,
)

__all__ = [
    "ConfigError",
    "ContractError",
    "IoError",
    "Network",
    "ParseError",
    "ShapeError",
    "bce_sum",
    "e_measure",
    "gen_synthetic",
    "mae",
    "max_f_beta",
    "read_image",
    "run_cli",
    "s_measure",
    "shape_plan",
    "write_pgm",
]
