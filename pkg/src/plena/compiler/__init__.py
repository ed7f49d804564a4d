"""Compiler: model graphs lowered to ISA programs, schedules, error budgets."""

from .bounds import attention_budget, decoder_budget, gemm_budget
from .lower import (
    AttnArtifact,
    CodeBuilder,
    DecoderArtifact,
    GemmArtifact,
    LoweringError,
    build_attention_program,
    build_gemm_program,
    compile_model,
    lower_gemm,
    pack_gemm_weights,
    pad_cols,
    read_attention_result,
    read_gemm_result,
    row_bytes,
)
from .model import ModelSpec, apply_rope, make_random_weights, rope_tables
from .reference import (
    RMS_EPS,
    reference_attention,
    reference_decoder,
    rmsnorm,
    silu,
    softmax,
)
from .schedule import (
    AttentionShape,
    GemmShape,
    PointwiseShape,
    RooflineEstimate,
    Schedule,
    check_schedule,
    gemm_stall_estimate,
    min_prefetch_distance,
    roofline_estimate,
    schedule_search,
)

__all__ = [
    "AttnArtifact",
    "AttentionShape",
    "CodeBuilder",
    "DecoderArtifact",
    "GemmArtifact",
    "GemmShape",
    "LoweringError",
    "ModelSpec",
    "PointwiseShape",
    "RMS_EPS",
    "RooflineEstimate",
    "Schedule",
    "apply_rope",
    "attention_budget",
    "build_attention_program",
    "build_gemm_program",
    "check_schedule",
    "compile_model",
    "decoder_budget",
    "gemm_budget",
    "gemm_stall_estimate",
    "lower_gemm",
    "make_random_weights",
    "min_prefetch_distance",
    "pack_gemm_weights",
    "pad_cols",
    "read_attention_result",
    "read_gemm_result",
    "reference_attention",
    "reference_decoder",
    "rmsnorm",
    "roofline_estimate",
    "rope_tables",
    "row_bytes",
    "schedule_search",
    "silu",
    "softmax",
]
