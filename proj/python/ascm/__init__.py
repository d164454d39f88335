"""Scale-attention correspondence network: dense features, matching and flow."""

from ._ascm import (
    ConfigError,
    FormatError,
    Fusion,
    Model,
    ModelConfig,
    dense_match,
    epe,
    estimate_flow,
    lr_schedule,
    match_loss,
    num_threads,
    pck_length,
    read_flo,
    read_pnm,
    set_num_threads,
    synth_pair,
    write_flo,
    write_pnm,
)

__all__ = [
    "ConfigError",
    "FormatError",
    "Fusion",
    "Model",
    "ModelConfig",
    "dense_match",
    "epe",
    "estimate_flow",
    "lr_schedule",
    "match_loss",
    "num_threads",
    "pck_length",
    "read_flo",
    "read_pnm",
    "set_num_threads",
    "synth_pair",
    "write_flo",
    "write_pnm",
]
