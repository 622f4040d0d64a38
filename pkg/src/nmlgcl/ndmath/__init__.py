"""Dense/sparse kernels on a reverse-mode tape, gradient checking and Adam."""

from .adam import AdamState, adam_step
from .gradcheck import finite_difference_errors, grad_check, tape_gradients
from .ops import (
    add,
    add_col,
    add_row,
    add_scalar,
    concat_rows_pairwise,
    constant,
    cosine_similarity_matrix,
    diagonal,
    exp,
    log,
    logsumexp_row,
    matmul,
    multiply,
    multiply_scalar,
    pair_mlp,
    reduce_mean,
    reduce_sum,
    relu,
    row_max,
    reshape,
    row_l2_normalize,
    row_softmax,
    spmm,
    sub,
    sum_rows,
    transpose,
)
from .tape import Tape, Tensor, as_tensor, backward
