import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import central_diff, tape_grads
from lotenet.errors import UsageError
from lotenet.feature_map import embed, embed_sites, local_phi, phi
from lotenet.tensor_core import joint_feature_vector, tsum


def test_local_phi_examples():
    np.testing.assert_allclose(local_phi(0.0), [1.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(local_phi(1.0), [0.0, 1.0], atol=1e-15)
    np.testing.assert_allclose(local_phi(0.5), [np.sqrt(0.5), np.sqrt(0.5)], atol=1e-15)


def test_out_of_range_is_clamped():
    np.testing.assert_array_equal(local_phi(-3.0), local_phi(0.0))
    np.testing.assert_array_equal(local_phi(7.0), local_phi(1.0))
    np.testing.assert_array_equal(phi(np.array([-1.0, 2.0])).data, phi(np.array([0.0, 1.0])).data)


@settings(max_examples=200, deadline=None)
@given(st.floats(-1.0, 2.0, allow_nan=False))
def test_local_phi_unit_norm(x):
    assert abs(np.linalg.norm(local_phi(x)) - 1.0) <= 1e-12


def test_embed_sites_examples():
    p = embed_sites(np.array([[0.0]]))
    assert (p.site_count, p.site_dim) == (1, 2)
    np.testing.assert_allclose(p.sites.data, [[1.0, 0.0]], atol=1e-15)

    p = embed_sites(np.array([[0.0, 1.0]]))
    np.testing.assert_allclose(p.sites.data, [[1.0, 0.0, 0.0, 1.0]] / np.sqrt(2), atol=1e-15)

    p = embed_sites(np.random.default_rng(0).uniform(size=(4, 4)))
    assert (p.site_count, p.site_dim) == (4, 8)
    np.testing.assert_allclose(np.linalg.norm(p.sites.data, axis=-1), 1.0, atol=1e-12)


def test_one_dimensional_patch_is_single_channel():
    p = embed_sites(np.array([0.0, 0.5, 1.0]))
    assert (p.site_count, p.site_dim) == (3, 2)


def test_empty_patch_rejected():
    with pytest.raises(UsageError):
        embed_sites(np.zeros((0, 1)))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_sites_unit_norm_and_joint_norm(n, c, seed):
    r = np.random.default_rng(seed)
    p = embed_sites(r.uniform(-0.2, 1.2, size=(n, c)))
    norms = np.linalg.norm(p.sites.data, axis=-1)
    np.testing.assert_allclose(norms, 1.0, atol=1e-12)
    if n <= 4:
        joint = joint_feature_vector(list(p.sites.data))
        assert abs(np.linalg.norm(joint) - 1.0) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_embed_order_preserving(n, seed):
    r = np.random.default_rng(seed)
    x = r.uniform(size=(n, 3))
    perm = r.permutation(n)
    np.testing.assert_array_equal(embed_sites(x[perm]).sites.data, embed_sites(x).sites.data[perm])


def test_phi_gradient_matches_analytic_and_finite_differences():
    x = np.array([0.1, 0.37, 0.8])
    g_cos, = tape_grads(lambda t: tsum(phi(t)[..., 0]), [x])
    g_sin, = tape_grads(lambda t: tsum(phi(t)[..., 1]), [x])
    np.testing.assert_allclose(g_cos, -np.pi / 2 * np.sin(np.pi * x / 2), atol=1e-12)
    np.testing.assert_allclose(g_sin, np.pi / 2 * np.cos(np.pi * x / 2), atol=1e-12)
    fd_cos, = central_diff(lambda a: sum(local_phi(v)[0] for v in a), [x.copy()])
    fd_sin, = central_diff(lambda a: sum(local_phi(v)[1] for v in a), [x.copy()])
    np.testing.assert_allclose(g_cos, fd_cos, atol=1e-6)
    np.testing.assert_allclose(g_sin, fd_sin, atol=1e-6)


def test_embed_batches_trailing_channels():
    x = np.random.default_rng(3).uniform(size=(2, 5, 3))
    out = embed(x)
    assert out.shape == (2, 5, 6)
    np.testing.assert_allclose(out.data[1, 2], np.concatenate([local_phi(v) for v in x[1, 2]]) / np.sqrt(3))
