"""Nested circulant encoding: coefficient packing inside blocks, SIMD across blocks."""

from .encoding import (
    EncodingError,
    block_conv_via_polymul,
    block_gemm_via_polymul,
    decode_block_gemm_output,
    decode_conv_output,
    encode_block_gemm_input,
    encode_block_gemm_weight,
    encode_conv_input,
    encode_conv_weight,
    gemm_weight_slots,
    pack_blocks_simd,
    unpack_blocks_simd,
)
from .executor import LayerCodec, PlanMismatch, execute_conv, execute_gemm
from .matrices import BlockCirculantConvKernel, BlockCirculantMatrix, ShapeError, is_block_circulant
from .planner import (
    BsgsPlan,
    PlanInfeasible,
    best_of,
    enumerate_conv_plans,
    enumerate_gemm_plans,
    plan_bsgs_conv,
    plan_bsgs_gemm,
)

__all__ = [name for name in dir() if not name.startswith("_")]
