"""Minimal reverse-mode autodiff engine and neural layers on numpy."""

from .complex import ComplexTensor, complex_concat
from .nn import BiLSTM, Conv2d, Dense, Embedding, LSTM, Module, SequenceNorm
from .ops import conv2d, inv, lstm
from .optim import Adam, global_grad_norm
from .tensor import (
    Tensor,
    as_tensor,
    clamp_min,
    concat,
    exp,
    get_default_dtype,
    log,
    log_softmax,
    logsumexp,
    matmul,
    mean,
    relu,
    set_default_dtype,
    sigmoid,
    softmax,
    sqrt,
    stack,
    tanh,
    tsum,
    where,
)

__all__ = [
    "Adam",
    "BiLSTM",
    "ComplexTensor",
    "Conv2d",
    "Dense",
    "Embedding",
    "LSTM",
    "Module",
    "SequenceNorm",
    "Tensor",
    "as_tensor",
    "clamp_min",
    "complex_concat",
    "concat",
    "conv2d",
    "exp",
    "get_default_dtype",
    "global_grad_norm",
    "inv",
    "log",
    "log_softmax",
    "logsumexp",
    "lstm",
    "matmul",
    "mean",
    "relu",
    "set_default_dtype",
    "sigmoid",
    "softmax",
    "sqrt",
    "stack",
    "tanh",
    "tsum",
    "where",
]
