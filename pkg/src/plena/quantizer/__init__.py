"""Post-training quantization: Hessian-aware rounding, clipping, rotation."""

from .clipping import DEFAULT_P_GRID, search_block_clipping
from .gptq import MODES, LayerQuant, layer_output_error, quantize_layer, rtn_quantize
from .hessian import gram_hessian, inverse_hessian_factor
from .rotation import activation_mse, quantize_activations, should_rotate

__all__ = [
    "DEFAULT_P_GRID",
    "search_block_clipping",
    "MODES",
    "LayerQuant",
    "layer_output_error",
    "quantize_layer",
    "rtn_quantize",
    "gram_hessian",
    "inverse_hessian_factor",
    "activation_mse",
    "quantize_activations",
    "should_rotate",
]
