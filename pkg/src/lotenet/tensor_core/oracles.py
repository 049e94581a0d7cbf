"""Brute-force reference computations.

These routines are deliberately slow and share no code path with the
contraction kernel; the test-suite uses them as independent oracles.  They
also host the tensor-train SVD, which turns a dense tensor into MPS cores.
"""
from __future__ import annotations

import itertools
from typing import Sequence

import numpy as np

from ..errors import ShapeError, UsageError
from .tensor import Tensor


def _arr(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)


def naive_contract(a, b, axes_a: Sequence[int], axes_b: Sequence[int]) -> np.ndarray:
    """Nested-loop contraction: one Python-level multiply per term."""
    a, b = _arr(a), _arr(b)
    fa = [i for i in range(a.ndim) if i not in axes_a]
    fb = [j for j in range(b.ndim) if j not in axes_b]
    out_shape = tuple(a.shape[i] for i in fa) + tuple(b.shape[j] for j in fb)
    summed = [range(a.shape[i]) for i in axes_a]
    out = np.zeros(out_shape)
    for out_idx in itertools.product(*(range(s) for s in out_shape)):
        ia_free, ib_free = out_idx[: len(fa)], out_idx[len(fa):]
        total = 0.0
        for k in itertools.product(*summed):
            ia = [0] * a.ndim
            ib = [0] * b.ndim
            for pos, ax in enumerate(fa):
                ia[ax] = ia_free[pos]
            for pos, ax in enumerate(fb):
                ib[ax] = ib_free[pos]
            for pos, (xa, xb) in enumerate(zip(axes_a, axes_b)):
                ia[xa] = k[pos]
                ib[xb] = k[pos]
            total += a[tuple(ia)] * b[tuple(ib)]
        out[out_idx] = total
    return out


def naive_trace_product(a, b) -> float:
    a, b = _arr(a), _arr(b)
    total = 0.0
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            total += a[i, j] * b[j, i]
    return total


def joint_feature_vector(sites) -> np.ndarray:
    """Materialise the d**N tensor-product embedding of a list of site vectors."""
    sites = _arr(sites)
    out = np.ones(1)
    for s in sites:
        out = np.kron(out, s)
    return out


# --------------------------------------------------------------------------
# MPS cores


def core_layout(cores: Sequence) -> tuple[int, list[tuple[bool, bool, bool]]]:
    """Classify each core as (has_left_bond, has_output_axis, has_right_bond).

    Axis order inside a core is ``(left?, site, output?, right?)``; border
    cores lack the outward bond.  Returns the output position and the flags.
    """
    n = len(cores)
    if n == 0:
        raise ShapeError("an MPS needs at least one core")
    flags = []
    outputs = []
    for j, core in enumerate(cores):
        left, right = j > 0, j < n - 1
        base = 1 + left + right
        rank = np.ndim(core.data if isinstance(core, Tensor) else core)
        if rank == base:
            flags.append((left, False, right))
        elif rank == base + 1:
            flags.append((left, True, right))
            outputs.append(j)
        else:
            raise ShapeError(f"core {j} has rank {rank}; expected {base} or {base + 1} at this position")
    if len(outputs) != 1:
        raise UsageError(f"exactly one core must carry the output axis, found {len(outputs)}")
    for j in range(n - 1):
        r = np.shape(_arr(cores[j]))[-1]
        l = np.shape(_arr(cores[j + 1]))[0]
        if r != l:
            raise ShapeError(f"bond mismatch between core {j} (right extent {r}) and core {j + 1} (left extent {l})")
    return outputs[0], flags


def full_from_cores(cores: Sequence) -> np.ndarray:
    """Expand an MPS into its dense tensor ``W[m, i_1, ..., i_N]``.

    Sums explicitly over every assignment of the bond indices, so the cost
    is exponential; use only on small chains.  Assignments are walked depth
    first so that products over a shared prefix are formed once.
    """
    out_pos, flags = core_layout(cores)
    arrs = [_arr(c) for c in cores]
    n = len(arrs)
    site_dims = [arrs[j].shape[1 if flags[j][0] else 0] for j in range(n)]
    n_out = arrs[out_pos].shape[2 if flags[out_pos][0] else 1]
    # accumulate in chain order, output axis moved to the front at the end
    total = np.zeros((*site_dims[:out_pos + 1], n_out, *site_dims[out_pos + 1:]))

    def walk(j: int, alpha_left: int, term: np.ndarray) -> None:
        nonlocal total
        left, _, right = flags[j]
        piece = arrs[j][alpha_left] if left else arrs[j]
        if not right:
            total += np.multiply.outer(term, piece)
            return
        for alpha in range(piece.shape[-1]):
            walk(j + 1, alpha, np.multiply.outer(term, piece[..., alpha]))

    walk(0, 0, np.ones(()))
    return np.moveaxis(total, out_pos + 1, 0)


def tt_svd(w, max_bond: int) -> list[Tensor]:
    """Tensor-train SVD of ``w`` with bond extents capped at ``max_bond``.

    The returned cores follow the MPS layout of :func:`full_from_cores`, with
    a unit-extent output axis on core ``N // 2``; so
    ``full_from_cores(cores)[0]`` approximates ``w``.
    """
    arr = _arr(w)
    if arr.ndim < 1:
        raise ShapeError("tt_svd needs a tensor of rank >= 1")
    if max_bond < 1:
        raise ShapeError(f"max_bond must be >= 1, got {max_bond}")
    dims = arr.shape
    n = len(dims)
    raw = []
    rank = 1
    rest = arr
    for k in range(n - 1):
        mat = rest.reshape(rank * dims[k], -1)
        u, s, vt = np.linalg.svd(mat, full_matrices=False)
        tol = max(mat.shape) * np.finfo(np.float64).eps * (s[0] if s.size else 0.0)
        keep = max(1, min(max_bond, int(np.count_nonzero(s > tol))))
        raw.append(u[:, :keep].reshape(rank, dims[k], keep))
        rest = s[:keep, None] * vt[:keep]
        rank = keep
    raw.append(rest.reshape(rank, dims[-1], 1))

    out_pos = n // 2
    cores = []
    for j, g in enumerate(raw):
        if j == 0:
            g = g[0]
            site_axis = 0
        else:
            site_axis = 1
        if j == n - 1:
            g = g[..., 0]
        if j == out_pos:
            g = np.expand_dims(g, site_axis + 1)
        cores.append(Tensor(g))
    return cores


def unfolding_truncation_errors(w, max_bond: int) -> list[float]:
    """Frobenius mass discarded by truncating each unfolding of ``w`` itself."""
    arr = _arr(w)
    errs = []
    for k in range(1, arr.ndim):
        s = np.linalg.svd(arr.reshape(int(np.prod(arr.shape[:k])), -1), compute_uv=False)
        errs.append(float(np.sqrt(np.sum(s[max_bond:] ** 2))))
    return errs


def sequential_truncation_error(w, max_bond: int) -> float:
    """Exact TT-SVD truncation error via explicit projections of full unfoldings.

    At step ``k`` the full-size tensor is unfolded after its first ``k``
    modes, projected onto the leading ``max_bond`` left singular vectors, and
    the discarded mass recorded.  The projections are nested, so the
    discarded pieces are mutually orthogonal and their squares add up.
    """
    t = _arr(w).copy()
    dims = t.shape
    total = 0.0
    for k in range(1, t.ndim):
        mat = t.reshape(int(np.prod(dims[:k])), -1)
        u, s, _ = np.linalg.svd(mat, full_matrices=False)
        total += float(np.sum(s[max_bond:] ** 2))
        q = u[:, :max_bond]
        t = (q @ (q.T @ mat)).reshape(dims)
    return float(np.sqrt(total))
