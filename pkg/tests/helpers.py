"""Shared test utilities."""
import numpy as np

from lotenet.tensor_core import GradTape, Tensor, backward


def central_diff(f, arrays, step=1e-5):
    """Central finite differences of scalar ``f(*arrays)`` w.r.t. every entry."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + step
            plus = f(*arrays)
            arr[idx] = orig - step
            minus = f(*arrays)
            arr[idx] = orig
            g[idx] = (plus - minus) / (2 * step)
        grads.append(g)
    return grads


def tape_grads(build, arrays):
    """Gradients of ``build(*tensors)`` (a scalar Tensor) from the tape."""
    leaves = [Tensor(a) for a in arrays]
    with GradTape() as tape:
        tape.watch(*leaves)
        loss = build(*leaves)
    grads = backward(tape, loss)
    return [grads[p] for p in leaves]


def rel_err(a, b, floor=1e-6):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))
