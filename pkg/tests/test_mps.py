import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import central_diff, rel_err, tape_grads
from lotenet.errors import ShapeError
from lotenet.feature_map import EmbeddedPatch, embed_sites
from lotenet.mps import (
    MpsBlock,
    clone_block,
    contract_block,
    core_shape,
    cost_estimate,
    expected_param_count,
    init_block,
    param_count,
)
from lotenet.tensor_core import Tensor, count_macs, full_from_cores, joint_feature_vector, tsum


def random_block(r, n, d, beta, nu):
    pos = n // 2
    cores = [Tensor(r.normal(size=core_shape(j, n, d, beta, nu, pos))) for j in range(n)]
    return MpsBlock(cores, n, d, beta, nu)


def random_sites(r, n, d):
    s = r.normal(size=(n, d))
    return s / np.linalg.norm(s, axis=1, keepdims=True)


def oracle_output(block, sites):
    full = full_from_cores([c.data for c in block.cores])
    return full.reshape(block.out_dim, -1) @ joint_feature_vector(list(sites))


def test_init_is_deterministic():
    a, b = init_block(4, 2, 5, 5, seed=7), init_block(4, 2, 5, 5, seed=7)
    for x, y in zip(a.cores, b.cores):
        assert x.data.tobytes() == y.data.tobytes()
    c = init_block(4, 2, 5, 5, seed=8)
    assert any(x.data.tobytes() != y.data.tobytes() for x, y in zip(a.cores, c.cores))


def test_param_count_example():
    blk = init_block(4, 8, 5, 5, seed=0)
    assert param_count(blk) == 2 * (8 * 5) + 5 * 8 * 5 + 5 * 8 * 5 * 5 == 1280
    assert expected_param_count(4, 8, 5, 5) == 1280


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 9), st.integers(1, 4), st.integers(1, 4), st.integers(1, 4))
def test_param_count_closed_form(n, d, beta, nu):
    blk = init_block(n, d, beta, nu, seed=0)
    assert blk.param_count == sum(int(np.prod(c.shape)) for c in blk.cores)
    assert blk.param_count == expected_param_count(n, d, beta, nu)


def test_param_count_linear_in_n():
    counts = [expected_param_count(n, 4, 3, 2) for n in range(4, 12)]
    assert len(set(np.diff(counts))) == 1


def test_output_core_at_center():
    blk = init_block(5, 2, 3, 4, seed=0)
    assert blk.out_position == 2
    assert blk.cores[2].shape == (3, 2, 4, 3)
    assert blk.cores[0].shape == (2, 3) and blk.cores[-1].shape == (3, 2)


def test_noise_free_output_bounded_for_all_lengths():
    r = np.random.default_rng(0)
    for n in range(2, 17):
        blk = init_block(n, 2, 4, 3, seed=0, noise=0.0)
        for _ in range(5):
            patch = embed_sites(r.uniform(size=(n, 1)))
            out = contract_block(blk, patch).data
            assert np.all(np.isfinite(out))
            assert np.linalg.norm(out) <= 1.0 + 1e-12


def test_single_site_returns_first_row():
    core = np.eye(2, 3)
    core[1, 2] = 0.25
    blk = MpsBlock([Tensor(core)], 1, 2, 4, 3)
    out = contract_block(blk, EmbeddedPatch(Tensor([[1.0, 0.0]])))
    np.testing.assert_array_equal(out.data, core[0])


@pytest.mark.parametrize("n", range(1, 9))
def test_matches_dense_oracle(n):
    r = np.random.default_rng(n)
    blk = random_block(r, n, 2, 3, 2)
    sites = random_sites(r, n, 2)
    got = contract_block(blk, Tensor(sites)).data
    want = oracle_output(blk, sites)
    assert np.linalg.norm(got - want) <= 1e-10 * np.linalg.norm(want)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(1, 3), st.integers(1, 4), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_schedules_agree(n, d, beta, nu, seed):
    r = np.random.default_rng(seed)
    blk = random_block(r, n, d, beta, nu)
    sites = Tensor(random_sites(r, n, d))
    a = contract_block(blk, sites, "pairwise").data
    b = contract_block(blk, sites, "sequential").data
    assert np.linalg.norm(a - b) <= 1e-10 * max(np.linalg.norm(b), 1e-300)


def test_linear_in_one_site(rng):
    n, d = 5, 3
    blk = random_block(rng, n, d, 3, 2)
    base = random_sites(rng, n, d)
    s1, s2 = rng.normal(size=d), rng.normal(size=d)
    a, b = 0.7, -1.3

    def out_with(v):
        s = base.copy()
        s[2] = v
        return contract_block(blk, Tensor(s)).data

    np.testing.assert_allclose(out_with(a * s1 + b * s2), a * out_with(s1) + b * out_with(s2), atol=1e-12)


def test_batch_axes_preserved(rng):
    blk = random_block(rng, 4, 2, 3, 2)
    sites = np.stack([random_sites(rng, 4, 2) for _ in range(6)]).reshape(2, 3, 4, 2)
    out = contract_block(blk, Tensor(sites)).data
    assert out.shape == (2, 3, 2)
    np.testing.assert_allclose(out[1, 2], contract_block(blk, Tensor(sites[1, 2])).data, atol=1e-14)


def test_site_mismatch_raises(rng):
    blk = random_block(rng, 4, 2, 3, 2)
    with pytest.raises(ShapeError):
        contract_block(blk, Tensor(random_sites(rng, 3, 2)))
    with pytest.raises(ShapeError):
        contract_block(blk, Tensor(random_sites(rng, 4, 3)))


def test_gradient_matches_finite_differences(rng):
    blk = random_block(rng, 5, 2, 3, 2)
    sites = Tensor(random_sites(rng, 5, 2))
    weights = rng.normal(size=2)
    arrays = [c.numpy() for c in blk.cores]

    def build(*cores):
        return tsum(contract_block(clone_block(blk, cores), sites) * weights)

    analytic = tape_grads(build, arrays)
    numeric = central_diff(lambda *a: build(*[Tensor(x) for x in a]).item(), [a.copy() for a in arrays])
    for a, n in zip(analytic, numeric):
        assert rel_err(a, n) <= 1e-4


@pytest.mark.parametrize("schedule", ["pairwise", "sequential"])
@pytest.mark.parametrize("n", range(1, 10))
def test_cost_estimate_equals_measured(n, schedule):
    blk = init_block(n, 3, 4, 2, seed=0)
    with count_macs() as macs:
        contract_block(blk, Tensor(random_sites(np.random.default_rng(0), n, 3)), schedule)
    assert cost_estimate(blk, schedule) == macs.total


def test_single_site_cost():
    assert cost_estimate(init_block(1, 6, 4, 5, seed=0)) == 6 * 5


def test_cost_bounded_by_n_beta_cubed_d():
    for n in (2, 8, 32):
        for beta in (2, 4, 8):
            for d in (2, 8):
                blk = init_block(n, d, beta, beta, seed=0, noise=0.0)
                assert cost_estimate(blk) <= 2 * n * beta**3 * d
