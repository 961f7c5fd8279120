import numpy as np
import pytest

from specalign import linalg
from specalign.evaluate import matching_accuracy
from specalign.kernels import KernelSpec, gram, unit_columns
from specalign.linalg import SpectralConfig
from specalign.loss import PairedBatch, cosine_similarity, preset
from specalign.simweights import contrastive_weights
from specalign.solver import (FixedPointConfig, KernelModel, contrastive_covariance, fit_kernel,
                              fit_linear, infer_kernel, kernel_spectral_step,
                              linear_kernel_spectrum_check, linear_objective, linear_spectral_step,
                              whitened_operator)
from specalign.synth import SynthConfig, generate, split

from oracles import naive_covariance, power_top_pair


def test_covariance_trivial():
    np.testing.assert_allclose(contrastive_covariance(np.eye(3), np.eye(3) / 3, np.eye(3)), np.eye(3) / 3)
    rng = np.random.default_rng(0)
    x, y = rng.standard_normal((4, 3)), rng.standard_normal((5, 3))
    e = np.zeros((3, 3))
    e[0, 1] = 1.0
    np.testing.assert_allclose(contrastive_covariance(x, e, y), np.outer(x[:, 0], y[:, 1]))


def test_covariance_naive_oracle():
    rng = np.random.default_rng(1)
    x, y = rng.standard_normal((6, 8)), rng.standard_normal((5, 8))
    w = contrastive_weights(preset("clip"), cosine_similarity(rng.standard_normal((3, 8)),
                                                              rng.standard_normal((3, 8))))
    np.testing.assert_allclose(contrastive_covariance(PairedBatch(x, y), w), naive_covariance(x, w, y),
                               atol=1e-12)
    with pytest.raises(ValueError):
        contrastive_covariance(x, w[:7], y)


def test_linear_step_full_rank_reconstructs():
    c = np.diag([2.0 * 3, 2.0 * 2, 2.0 * 0.5])
    m = linear_spectral_step(c, 3, rho=2.0)
    np.testing.assert_allclose(m.operator, c / 2.0, atol=1e-14)


def test_linear_step_rank_one_power_iteration():
    c = np.random.default_rng(2).standard_normal((6, 5))
    sigma, u, v = power_top_pair(c)
    m = linear_spectral_step(c, 1, rho=0.5)
    np.testing.assert_allclose(m.operator, sigma / 0.5 * np.outer(u, v), atol=1e-9)


def test_linear_step_beats_random_probes():
    rng = np.random.default_rng(3)
    c = rng.standard_normal((7, 6))
    m = linear_spectral_step(c, 3, rho=1.0)
    best = linear_objective(m.f1, m.f2, c, 1.0)
    n1, n2 = np.linalg.norm(m.f1), np.linalg.norm(m.f2)
    for _ in range(100):
        f1, f2 = rng.standard_normal(m.f1.shape), rng.standard_normal(m.f2.shape)
        f1 *= n1 / np.linalg.norm(f1)
        f2 *= n2 / np.linalg.norm(f2)
        assert linear_objective(f1, f2, c, 1.0) <= best + 1e-12


def test_kernel_step_identity_gram():
    w = np.random.default_rng(4).standard_normal((6, 6))
    cfg = SpectralConfig(tikhonov_lambda=0.0)
    a, b = kernel_spectral_step(np.eye(6), np.eye(6), w, 2, 1.0, cfg)
    np.testing.assert_allclose(a @ b.T, linear_spectral_step(w, 2, 1.0).operator, atol=1e-12)


def test_kernel_step_whitened_relation_and_orthonormality():
    rng = np.random.default_rng(5)
    x, y = rng.standard_normal((12, 10)), rng.standard_normal((11, 10))
    kx, ky = gram(KernelSpec("angular"), x), gram(KernelSpec("rbf"), y)
    w = rng.standard_normal((10, 10))
    cfg = SpectralConfig(tikhonov_lambda=0.0)
    a, b = kernel_spectral_step(kx, ky, w, 3, 2.0, cfg)
    m = whitened_operator(kx, ky, w, cfg)
    lhs = linalg.psd_sqrt(kx) @ a @ b.T @ linalg.psd_sqrt(ky)
    rhs = linalg.svd_truncated(m, 3).reconstruct() / 2.0
    assert np.linalg.norm(lhs - rhs) < 1e-7 * max(1.0, np.linalg.norm(rhs))
    np.testing.assert_allclose(a.T @ kx @ a, np.eye(3), atol=1e-7)


def test_spectrum_check_cases():
    q = np.linalg.qr(np.random.default_rng(6).standard_normal((8, 5)))[0]
    w = np.random.default_rng(7).standard_normal((5, 5))
    sv_c, sv_m = linear_kernel_spectrum_check(PairedBatch(q, q), w, 3)
    np.testing.assert_allclose(sv_c, sv_m, rtol=1e-12)
    rng = np.random.default_rng(8)
    x, y = rng.standard_normal((9, 6)), rng.standard_normal((7, 6))
    w6 = rng.standard_normal((6, 6))
    sv_c, sv_m = linear_kernel_spectrum_check(PairedBatch(x, y), w6, 4)
    np.testing.assert_allclose(sv_c, sv_m, rtol=1e-8)
    x[:, 3] = x[:, 1]
    sv_c, sv_m = linear_kernel_spectrum_check(PairedBatch(x, y), w6, 4)
    np.testing.assert_allclose(sv_c, sv_m, rtol=1e-8)


@pytest.fixture(scope="module")
def linear_split():
    return split(generate(SynthConfig(seed=0)))


def test_fit_linear_reaches_full_accuracy(linear_split):
    tr = linear_split[0]
    m = fit_linear(tr.batch, preset("clip"), 10, FixedPointConfig(rel_tol=1e-3))
    assert matching_accuracy(m.similarity(tr.batch.x, tr.batch.y))[2] == 1.0
    assert m.diagnostics.converged and m.diagnostics.iterations <= 5


def test_fit_linear_deterministic(linear_split):
    tr = linear_split[0]
    a = fit_linear(tr.batch, preset("clip"), 10, FixedPointConfig(max_iters=3), seed=4)
    b = fit_linear(tr.batch, preset("clip"), 10, FixedPointConfig(max_iters=3), seed=4)
    assert np.array_equal(a.operator, b.operator)


def test_fit_linear_one_iteration_unrolls():
    ds = generate(SynthConfig(n=40, d1=8, d2=6, r_latent=3, seed=2))
    m = fit_linear(ds.batch, preset("clip"), 3, FixedPointConfig(max_iters=1), seed=5)
    rng = np.random.default_rng(5)
    f1, f2 = rng.normal(0, 0.1, (3, 8)), rng.normal(0, 0.1, (3, 6))
    w = contrastive_weights(preset("clip"), cosine_similarity(f1 @ ds.batch.x, f2 @ ds.batch.y))
    manual = linear_spectral_step(ds.batch.x @ w @ ds.batch.y.T, 3, 1.0)
    np.testing.assert_allclose(m.operator, manual.operator, atol=1e-12)
    assert m.diagnostics.iterations == 1


def test_linear_kernel_matches_linear_fit(linear_split):
    tr, _, te = linear_split
    cfg = FixedPointConfig(max_iters=6)
    lin = fit_linear(tr.batch, preset("clip"), 10, cfg)
    ker = fit_kernel(tr.batch, preset("clip"), KernelSpec("linear"), KernelSpec("linear"), 10, cfg)
    a_lin = matching_accuracy(lin.similarity(te.batch.x, te.batch.y))[2]
    a_ker = matching_accuracy(ker.similarity(te.batch.x, te.batch.y))[2]
    assert abs(a_lin - a_ker) <= 0.02


def test_fit_kernel_whitened_relation_each_iteration():
    ds = generate(SynthConfig(n=40, d1=8, d2=6, r_latent=3, nonlinearity="tanh", seed=3))
    fam = preset("clip")
    k = KernelSpec("angular")
    m = fit_kernel(ds.batch, fam, k, k, 3, FixedPointConfig(max_iters=3), record_weights=True)
    x, y = unit_columns(ds.batch.x), unit_columns(ds.batch.y)
    kx, ky = gram(k, x), gram(k, y)
    cfg = SpectralConfig()
    lam_x, lam_y = cfg.gram_lambda(kx), cfg.gram_lambda(ky)
    mw = whitened_operator(kx, ky, m.diagnostics.weight_snapshots[-1], cfg)
    lhs = linalg.psd_sqrt(kx, lam_x) @ m.a @ m.b.T @ linalg.psd_sqrt(ky, lam_y)
    rhs = linalg.svd_truncated(mw, 3).reconstruct()
    assert np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs) < 1e-6


def test_infer_reproduces_in_sample_similarity():
    ds = generate(SynthConfig(n=30, d1=6, d2=5, r_latent=3, nonlinearity="tanh", seed=4))
    k = KernelSpec("angular")
    m = fit_kernel(ds.batch, preset("clip"), k, k, 3, FixedPointConfig(max_iters=2))
    kx, ky = gram(k, m.ref_x), gram(k, m.ref_y)
    in_sample = cosine_similarity(m.a.T @ kx, m.b.T @ ky)
    _, _, sim = infer_kernel(m, ds.batch.x[:, [2, 5]], ds.batch.y[:, [7, 1]])
    np.testing.assert_allclose(sim, in_sample[np.ix_([2, 5], [7, 1])], atol=1e-10)


def test_infer_symmetric_when_sides_match():
    rng = np.random.default_rng(9)
    ref = unit_columns(rng.standard_normal((4, 10)))
    a = rng.standard_normal((10, 3))
    m = KernelModel(a, a, ref, ref, KernelSpec(), KernelSpec())
    q = rng.standard_normal((4, 6))
    _, _, sim = infer_kernel(m, q, q)
    np.testing.assert_allclose(sim, sim.T, atol=1e-12)
    with pytest.raises(ValueError, match="feature dims"):
        infer_kernel(m, np.ones((5, 2)), q)


def test_zero_embedding_maps_to_minus_inf():
    m = fit_linear(generate(SynthConfig(n=20, d1=5, d2=5, r_latent=2)).batch, preset("clip"), 2,
                   FixedPointConfig(max_iters=1))
    x = np.zeros((5, 3))
    x[:, 1] = 1.0
    with pytest.warns(RuntimeWarning, match="zero-norm"):
        sim = m.similarity(x, np.ones((5, 2)))
    assert np.all(np.isneginf(sim[[0, 2]])) and np.all(np.isfinite(sim[1]))


def test_average_weight_update_stabilises_triplet():
    tr, _, te = split(generate(SynthConfig(seed=1, nonlinearity="tanh")))
    k = KernelSpec("angular")
    cfg = FixedPointConfig(max_iters=8, rel_tol=1e-3, weight_update="average")
    m = fit_kernel(tr.batch, preset("triplet"), k, k, 10, cfg, seed=1)
    assert matching_accuracy(m.similarity(te.batch.x, te.batch.y))[2] >= 0.85


def test_fixed_point_config_validation():
    with pytest.raises(ValueError):
        FixedPointConfig(max_iters=0)
    with pytest.raises(ValueError):
        FixedPointConfig(rel_tol=0.0)
    with pytest.raises(ValueError, match="weight_update"):
        FixedPointConfig(weight_update="momentum")
