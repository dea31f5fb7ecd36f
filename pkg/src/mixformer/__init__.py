"""MixFormer: window attention and depth-wise convolution mixed in parallel, in pure numpy."""
from .backbone import VARIANTS, MixFormer, ModelConfig, build_model
from .block import MixingBlock, MixingBlockConfig
from .complexity import ComplexityQuery, model_report, op_flops
from .gradcheck import finite_difference_check
from .tensor import Parameter, Tensor, no_grad

__all__ = [
    "VARIANTS",
    "ComplexityQuery",
    "MixFormer",
    "MixingBlock",
    "MixingBlockConfig",
    "ModelConfig",
    "Parameter",
    "Tensor",
    "build_model",
    "finite_difference_check",
    "model_report",
    "no_grad",
    "op_flops",
]
