from .tensor import (
    NonFiniteError,
    Tensor,
    add,
    backward,
    concat,
    div,
    exp,
    getitem,
    log,
    matmul,
    mean,
    mul,
    neg,
    pad,
    power,
    reshape,
    split,
    sqrt,
    sub,
    sum,
    tape,
    tensor,
    transpose,
)
from .functional import (
    activation,
    batch_norm,
    conv1d,
    dropout,
    gelu,
    glu,
    log_softmax,
    relu,
    sigmoid,
    softmax,
)
from .gradcheck import finite_diff_check

__all__ = [
    "NonFiniteError", "Tensor", "activation", "add", "backward", "batch_norm", "concat",
    "conv1d", "div", "dropout", "exp", "finite_diff_check", "gelu", "getitem", "glu", "log",
    "log_softmax", "matmul", "mean", "mul", "neg", "pad", "power", "relu", "reshape",
    "sigmoid", "softmax", "split", "sqrt", "sub", "sum", "tape", "tensor", "transpose",
]
