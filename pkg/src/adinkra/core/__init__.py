from .gradcheck import GradCheckReport, grad_check, numerical_grad
from .ops import (conv2d, conv2d_reference, dropout, flatten, linear, log_softmax,
                  maxpool2, relu, reshape, softmax, softmax_cross_entropy, sum_all, tanh)
from .optim import adam_step
from .tensor import (GradientTape, ParamTensor, Tensor, backward, current_tape,
                     ensure_tensor, zero_grad)

__all__ = [
    "GradCheckReport", "GradientTape", "ParamTensor", "Tensor", "adam_step", "backward",
    "conv2d", "conv2d_reference", "current_tape", "dropout", "ensure_tensor", "flatten",
    "grad_check", "linear", "log_softmax", "maxpool2", "numerical_grad", "relu", "reshape",
    "softmax", "softmax_cross_entropy", "sum_all", "tanh", "zero_grad",
]
