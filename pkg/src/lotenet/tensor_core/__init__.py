"""Dense tensors, contraction, reverse-mode differentiation and oracles."""
from .ltt import load_ltt, read_ltt, save_ltt, write_ltt
from .oracles import (
    core_layout,
    full_from_cores,
    joint_feature_vector,
    naive_contract,
    naive_trace_product,
    sequential_truncation_error,
    tt_svd,
    unfolding_truncation_errors,
)
from .tensor import (
    NARROW,
    PRECISIONS,
    WIDE,
    GradTape,
    MacCounter,
    Tensor,
    active_tape,
    add,
    as_tensor,
    backward,
    broken_adjoint,
    clip,
    concat,
    contract,
    cos,
    count_macs,
    dtype_for,
    exp,
    log,
    logsumexp,
    matmul,
    mean,
    mul,
    permute,
    pick,
    reshape,
    scale,
    sigmoid,
    sin,
    stack,
    sub,
    take,
    trace_product,
    tsum,
    zeros,
)
