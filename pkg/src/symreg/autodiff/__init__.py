from symreg.autodiff.tensor import ComputeGraph, Tensor, as_tensor, backward, concat
from symreg.autodiff.ops import conv3d, dense, dropout, flatten, maxpool3d, relu
from symreg.autodiff.optim import Adam, OptimizerState, adam_step
from symreg.autodiff.gradcheck import GradCheckReport, grad_check

__all__ = [
    "Adam", "ComputeGraph", "GradCheckReport", "OptimizerState", "Tensor", "adam_step",
    "as_tensor", "backward", "concat", "conv3d", "dense", "dropout", "flatten",
    "grad_check", "maxpool3d", "relu",
]
