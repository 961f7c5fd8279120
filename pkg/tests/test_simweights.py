import numpy as np
import pytest

from specalign.loss import LossFamily, loss_grad_wrt_similarity, preset
from specalign.simweights import (alpha_coefficients, beta_coefficients, contrastive_weights,
                                  weights_generalized, weights_one_to_one)
from specalign.solver import contrastive_covariance
from specalign.synth import SynthConfig, generate, many_to_many_augment

from oracles import naive_covariance


def rel_dev(a, b):
    return np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-4))


def test_identity_family_closed_form():
    n = 3
    w = weights_one_to_one(preset("identity"), np.random.default_rng(0).uniform(-1, 1, (n, n)))
    off = ~np.eye(n, dtype=bool)
    np.testing.assert_allclose(w[off], -1.0 / n, atol=1e-15)
    np.testing.assert_allclose(np.diag(w), (n - 1) / n, atol=1e-15)


def test_clip_signs_on_aligned_similarity():
    s = -np.ones((5, 5))
    np.fill_diagonal(s, 1.0)
    w = weights_one_to_one(preset("clip"), s)
    assert np.all(np.diag(w) >= 0)
    assert np.all(w[~np.eye(5, dtype=bool)] <= 0)
    fd = -loss_grad_wrt_similarity(preset("clip"), s)
    assert rel_dev(w, fd) < 1e-4


@pytest.mark.parametrize("name", ["clip", "infonce", "identity", "clip-log1p"])
def test_single_sample(name):
    s = np.array([[0.3]])
    fam = preset(name)
    w = weights_generalized(fam, s)
    fd = -loss_grad_wrt_similarity(fam, s)
    assert abs(w[0, 0] - fd[0, 0]) < 1e-8


@pytest.mark.parametrize("name", ["clip", "infonce", "identity", "triplet", "clip-log1p"])
def test_paths_agree(name):
    fam = preset(name)
    rng = np.random.default_rng(3)
    for n in (2, 4, 9):
        s = rng.uniform(-1, 1, (n, n))
        np.testing.assert_allclose(weights_one_to_one(fam, s), weights_generalized(fam, s), atol=1e-12, rtol=0)


def test_paths_agree_nu2_partial_eps():
    fam = LossFamily(nu=2.0, epsilon_diag=0.3, epsilon_offdiag=0.7)
    s = np.random.default_rng(8).uniform(-1, 1, (6, 6))
    np.testing.assert_allclose(weights_one_to_one(fam, s), weights_generalized(fam, s), atol=1e-12, rtol=0)
    fd = -loss_grad_wrt_similarity(fam, s)
    assert rel_dev(weights_generalized(fam, s), fd) < 1e-4


def test_all_true_mask_uniform():
    s = np.full((4, 4), 0.2)
    w = weights_generalized(preset("identity"), s, np.ones((4, 4), dtype=bool))
    np.testing.assert_allclose(w, w[0, 0])


def test_block_mask_finite_difference():
    s = np.random.default_rng(5).uniform(-1, 1, (5, 5))
    m = np.eye(5, dtype=bool)
    m[1, 3] = True
    for name in ("clip", "infonce", "identity"):
        fam = preset(name)
        assert rel_dev(weights_generalized(fam, s, m), -loss_grad_wrt_similarity(fam, s, m)) < 1e-4


def test_dispatch_uses_shortcut_on_identity_mask():
    s = np.random.default_rng(6).uniform(-1, 1, (4, 4))
    fam = preset("clip")
    np.testing.assert_array_equal(contrastive_weights(fam, s, np.eye(4, dtype=bool)),
                                  weights_one_to_one(fam, s))


def test_beta_all_ones():
    fam = preset("identity")
    bp, bd = beta_coefficients(fam, np.zeros((4, 4)))
    np.testing.assert_allclose(bp, 1.0)
    np.testing.assert_allclose(bd, 1.0 * 4 - 1)
    bp, bd = beta_coefficients(LossFamily(phi="identity", psi="identity", nu=2.0), np.zeros((4, 4)))
    np.testing.assert_allclose(bd, 2.0 * 4 - 1)


def test_beta_covariance_identity():
    rng = np.random.default_rng(9)
    n = 2
    s = rng.uniform(-1, 1, (n, n))
    x, y = rng.standard_normal((3, n)), rng.standard_normal((4, n))
    bp, bd = beta_coefficients(preset("identity"), s)
    cov = sum(bd[i] * np.outer(x[:, i], y[:, i]) for i in range(n)) / n
    cov -= sum(bp[i, j] * np.outer(x[:, i], y[:, j]) for i in range(n) for j in range(n) if i != j) / n
    w = weights_one_to_one(preset("identity"), s)
    np.testing.assert_allclose(cov, contrastive_covariance(x, w, y), atol=1e-12)
    np.testing.assert_allclose(naive_covariance(x, w, y), x @ w @ y.T, atol=1e-12)


def test_beta_rejects_nonlinear():
    with pytest.raises(ValueError):
        beta_coefficients(preset("clip"), np.zeros((2, 2)))


def test_alpha_shapes_positive():
    a, ab = alpha_coefficients(preset("clip"), np.random.default_rng(0).uniform(-1, 1, (5, 5)))
    assert a.shape == ab.shape == (5, 5)
    assert np.all(a > 0) and np.all(ab > 0)


def test_augmented_batch_weights():
    ds = generate(SynthConfig(n=3, d1=4, d2=4, r_latent=2, seed=1))
    aug = many_to_many_augment(ds, 2, seed=2)
    assert aug.batch.n == 6
    assert np.all(aug.batch.mask.sum(axis=1) == 2)
    s = np.random.default_rng(4).uniform(-1, 1, (6, 6))
    fam = preset("clip")
    assert rel_dev(weights_generalized(fam, s, aug.batch.mask),
                   -loss_grad_wrt_similarity(fam, s, aug.batch.mask)) < 1e-4


def test_non_square_rejected():
    with pytest.raises(ValueError):
        weights_one_to_one(preset("clip"), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        weights_generalized(preset("clip"), np.zeros((2, 3)))
