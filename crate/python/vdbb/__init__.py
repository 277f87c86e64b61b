"""DBB codec, systolic tensor array simulator and accelerator cost model."""

from ._vdbb import (
    CostCoefficients,
    DbbFormat,
    DbbMatrix,
    SimResult,
    StaConfig,
    check,
    encode,
    estimate_cost,
    gemm_ref,
    model,
    prune,
    simulate,
    sweep,
)

__all__ = [
    "CostCoefficients",
    "DbbFormat",
    "DbbMatrix",
    "SimResult",
    "StaConfig",
    "check",
    "encode",
    "estimate_cost",
    "gemm_ref",
    "model",
    "prune",
    "simulate",
    "sweep",
]
