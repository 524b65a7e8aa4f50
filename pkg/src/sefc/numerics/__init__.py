"""Dense tensor arithmetic with reverse-mode gradients."""

from .gradcheck import GradCheckReport, gradient_check, relative_error
from .nn import (
    LSTM,
    MLP,
    LayerNorm,
    Linear,
    Module,
    Parameter,
    UnnamedParameterError,
    make_rng,
    parameter_hashes,
)
from .tensor import (
    COST,
    EPS,
    NonFiniteError,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    clip,
    concat,
    cost_scope,
    div,
    exp,
    gelu,
    getitem,
    inject_backward_fault,
    layer_norm,
    lstm_cell_step,
    masked_fill,
    matmul,
    mean,
    mul,
    no_grad,
    reset_cost,
    reshape,
    sigmoid,
    softmax,
    square,
    stack,
    standardize,
    sub,
    sum_,
    take_rows,
    tanh,
    transpose,
)
