import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ngmca.datagen import make_dataset
from ngmca.evaluation import evaluate
from ngmca.separation import (
    VARIANTS,
    NgmcaConfig,
    Problem,
    ThresholdState,
    coefficient_gains,
    estimate_noise_std,
    full_cost,
    gradient_noise_sigma,
    initialize,
    ls_coefficients,
    mad_sigma,
    mixture_mad_sigma,
    residual_noise_sigma,
    reweight_lambda,
    run_ngmca,
    sparse_hals_baseline,
    update_thresholds,
)
from ngmca.transforms import Identity, OrthoWavelet, UndecimatedWavelet

QUICK = dict(K=40, refinement_iters=10, inner_iters=30, final_inner_iters=60)


def small_problem(seed=0, snr_db=30.0, n=64, m=8, r=3):
    d = make_dataset(n=n, m=m, r=r, snr_db=snr_db, seed=seed)
    return d, Problem(d.Y, r)


def test_mad_examples():
    assert mad_sigma(np.array([1.0, 1, 1, 1])) == 0.0
    assert mad_sigma(np.array([0.0, 0, 0, 10])) == 0.0
    x = np.random.default_rng(0).standard_normal(100_000)
    assert 0.98 <= mad_sigma(x) <= 1.02
    np.testing.assert_allclose(mad_sigma(np.array([[1.0, 2, 3], [0, 0, 4]])), [1.4826, 0.0])
    with pytest.raises(ValueError):
        mad_sigma(np.ones(1))


def test_mixture_mad_equal_gains():
    assert np.isclose(mixture_mad_sigma(np.full(5, 0.3)), 0.3 * 1.4826 * 0.6744897501960817, rtol=1e-9)


def test_mixture_mad_matches_monte_carlo():
    W = UndecimatedWavelet(64, "symmlet4", 3)
    gains = coefficient_gains(W)
    x = np.random.default_rng(1).standard_normal((400, 64))
    mc = mad_sigma(W.forward(x).ravel())
    assert abs(mixture_mad_sigma(gains) - mc) < 0.01
    # frozen Monte-Carlo value (2e6 samples, n=1024) of the UDWT Symmlet-4 / 3 levels case
    assert abs(mixture_mad_sigma(gains) - 0.4484) < 0.002


def test_coefficient_gains_of_tight_frame():
    g = coefficient_gains(UndecimatedWavelet(32, "haar", 2))
    # each sample is spread over the bands with unit total energy
    assert np.isclose(np.sum(g ** 2), 32.0)
    np.testing.assert_allclose(coefficient_gains(Identity(8)), 1.0)


def test_residual_noise_sigma():
    g = np.random.default_rng(2)
    A = np.abs(g.standard_normal((20, 4)))
    S = np.abs(g.standard_normal((4, 2000))) * 10
    Y = A @ S + 0.3 * g.standard_normal((20, 2000))
    assert abs(residual_noise_sigma(Y, A) - 0.3) < 0.01
    assert residual_noise_sigma(Y[:4], A[:4]) is None


def test_gradient_noise_sigma_scales_with_columns():
    g = np.random.default_rng(3)
    A = np.abs(g.standard_normal((20, 3)))
    S = np.zeros((3, 512))
    Y = 0.5 * g.standard_normal((20, 512))
    sig = gradient_noise_sigma(Y, A, S, Identity(512))
    # gradient rows are A_i^T Z: white with std ||A_i|| * 0.5
    np.testing.assert_allclose(sig, 0.5 * np.linalg.norm(A, axis=0) * 0.6745 * 1.4826, rtol=0.08)
    fallback = gradient_noise_sigma(Y[:3], A[:3], S, Identity(512))
    assert fallback.shape == (3,)


def state(lam0, D=10, tau=1.0):
    r = lam0.shape[0]
    return ThresholdState(lam=lam0.copy(), sigma_grad=np.zeros(r), floor=np.zeros((r, 1)), tau=tau, descent_iters=D)


def test_thresholds_fixed_in_refinement():
    s = state(np.full((2, 4), 3.0), D=10)
    cfg = NgmcaConfig(K=20, refinement_iters=10)
    assert update_thresholds(s, None, 11, cfg, sigma=np.ones(2)) is s


def test_thresholds_linear_with_constant_noise():
    lam0 = np.array([[5.0] * 3, [9.0] * 3])
    D = 8
    s = state(lam0, D=D, tau=2.0)
    cfg = NgmcaConfig(K=12, refinement_iters=4)
    sigma = np.array([0.5, 1.0])
    floor = 2.0 * sigma[:, None]
    for k in range(1, D + 1):
        s = update_thresholds(s, None, k, cfg, sigma=sigma)
        np.testing.assert_allclose(s.lam, lam0 - k * (lam0 - floor) / D, rtol=1e-12)
    np.testing.assert_allclose(s.lam, np.broadcast_to(floor, lam0.shape))


def test_thresholds_from_gradient_rows():
    g = np.random.default_rng(5)
    R = g.standard_normal((2, 10_000)) * np.array([[1.0], [3.0]])
    s = update_thresholds(state(np.full((2, 1), 10.0), D=5), R, 1, NgmcaConfig(K=10, refinement_iters=5))
    np.testing.assert_allclose(s.sigma_grad, [1.0, 3.0], rtol=0.05)


@given(sigmas=arrays(np.float64, (12, 2), elements=st.floats(0, 20)))
def test_thresholds_retarget_monotone(sigmas):
    lam0 = np.full((2, 3), 10.0)
    s = state(lam0, D=12)
    cfg = NgmcaConfig(K=20, refinement_iters=8)
    for k, sig in enumerate(sigmas, start=1):
        before = s.lam.copy()
        s = update_thresholds(s, None, k, cfg, sigma=sig)
        floor = np.broadcast_to(s.floor, before.shape)
        assert np.all(s.lam >= 0)
        assert np.all(s.lam <= before)
        # the step moves toward the current floor without overshooting it
        assert np.all(np.abs(s.lam - floor) <= np.abs(before - floor) + 1e-12)
    # the last descent step lands on the floor unless that would raise lam
    np.testing.assert_allclose(s.lam, np.minimum(before, floor), atol=1e-12)


def test_reweight_examples():
    lam = np.full((2, 3), 4.0)
    Sigma = np.array([[1.0], [2.0]])
    np.testing.assert_array_equal(reweight_lambda(lam, np.zeros((2, 3)), Sigma), lam)
    np.testing.assert_allclose(reweight_lambda(lam, np.broadcast_to(Sigma, (2, 3)), Sigma), lam / 2)
    np.testing.assert_allclose(reweight_lambda(lam, -10 * np.broadcast_to(Sigma, (2, 3)), Sigma), lam / 101)
    with pytest.raises(ValueError):
        reweight_lambda(lam, lam, 0.0)


@given(lam=arrays(np.float64, 6, elements=st.floats(0, 100)),
       s=arrays(np.float64, 6, elements=st.floats(-1e3, 1e3)),
       sigma=st.floats(1e-3, 10))
def test_reweight_never_increases(lam, s, sigma):
    assert np.all(reweight_lambda(lam, s, sigma) <= lam)


def test_ls_coefficients():
    g = np.random.default_rng(6)
    Q, _ = np.linalg.qr(g.standard_normal((7, 3)))
    Y = g.standard_normal((7, 16))
    np.testing.assert_allclose(ls_coefficients(Y, Q), Q.T @ Y, atol=1e-12)
    A = np.abs(g.standard_normal((7, 3)))
    S = g.standard_normal((3, 16))
    np.testing.assert_allclose(ls_coefficients(A @ S, A), S, atol=1e-10)
    W = UndecimatedWavelet(16, "haar", 2)
    Sw = ls_coefficients(Y, A, W)
    resid = A.T @ Y - A.T @ A @ W.adjoint(Sw)
    assert np.abs(resid).max() < 1e-8


def test_ls_coefficients_ridge_on_rank_deficiency():
    A = np.ones((4, 2))
    out, info = ls_coefficients(np.ones((4, 3)), A, full_output=True)
    assert info["ridge"] > 0 and np.all(np.isfinite(out))


def test_noise_std_from_differences():
    g = np.random.default_rng(7)
    smooth = np.tile(np.sin(np.linspace(0, 3, 4000)), (3, 1)) * 50
    assert abs(estimate_noise_std(smooth + 0.2 * g.standard_normal(smooth.shape)) - 0.2) < 0.01


def test_hals_rank_one_and_large_lambda():
    g = np.random.default_rng(8)
    a, s = np.abs(g.standard_normal(6)), np.abs(g.standard_normal(40))
    res = sparse_hals_baseline(np.outer(a, s), 1, 0.0, iters=100)
    assert abs(np.corrcoef(res.S[0], s)[0, 1]) > 0.999
    res = sparse_hals_baseline(np.outer(a, s), 2, 1e6, iters=10)
    np.testing.assert_array_equal(res.S, 0.0)
    with pytest.raises(ValueError):
        sparse_hals_baseline(np.outer(a, s), 1, -1.0)


def test_hals_cost_decreases():
    d, _ = small_problem(1)
    res = sparse_hals_baseline(d.Y, 3, 0.05, iters=50)
    assert np.all(np.diff(res.diagnostics["cost"]) <= 1e-9 * res.diagnostics["cost"][0])


def test_config_validation():
    with pytest.raises(ValueError):
        NgmcaConfig(variant="nope")
    with pytest.raises(ValueError):
        NgmcaConfig(K=10, refinement_iters=10)
    with pytest.raises(ValueError):
        NgmcaConfig(tau_sigma_inf=0.0)
    with pytest.raises(ValueError):
        NgmcaConfig(reweight_passes=0)
    assert NgmcaConfig(variant="analysis").tau_sigma_inf == 2.0
    assert NgmcaConfig(variant="ortho").tau_sigma_inf == 1.0
    assert NgmcaConfig().descent_iters == 250


def test_problem_validation():
    with pytest.raises(ValueError):
        Problem(np.ones((3, 4)), 5)
    with pytest.raises(ValueError):
        Problem(np.full((3, 4), np.nan), 1)


def test_initialize_contract():
    d, prob = small_problem(2, snr_db=20)
    cfg = NgmcaConfig(variant="synthesis", seed=4)
    A, X, lam = initialize(prob, cfg)
    assert A.min() >= 0
    np.testing.assert_allclose(np.linalg.norm(A, axis=0), 1.0)
    assert X.shape == (3, 4 * 64) and not X.any()
    A2, _, lam2 = initialize(prob, cfg)
    assert np.array_equal(A, A2) and np.array_equal(lam, lam2)
    W = cfg.build_transform(64)
    floor = cfg.tau_sigma_inf * gradient_noise_sigma(d.Y, A, X[:, :64] * 0, W)
    assert np.all(lam >= floor[:, None])


def test_full_cost_indicators():
    W = Identity(4)
    A = np.array([[1.0], [0.0]])
    S = np.ones((1, 4))
    Y = A @ S
    assert full_cost(Y, A, S, 0.5, "direct", W) == pytest.approx(2.0)
    assert full_cost(Y, -A, S, 0.5, "direct", W) == np.inf
    assert full_cost(Y, 2 * A, S, 0.5, "direct", W) == np.inf
    assert full_cost(Y, 2 * A, S, 0.5, "direct", W, constrained=False) < np.inf


def test_rank_one_noiseless_recovery():
    g = np.random.default_rng(9)
    a = np.abs(g.standard_normal(6))
    s = np.maximum(g.standard_normal(64), 0)
    res = run_ngmca(Problem(np.outer(a, s), 1), NgmcaConfig(**QUICK))
    assert abs(np.corrcoef(res.S[0], s)[0, 1]) > 0.999
    assert abs(np.corrcoef(res.A[:, 0], a)[0, 1]) > 0.999


def test_disjoint_sparse_sources_noiseless():
    g = np.random.default_rng(10)
    m, n, r = 16, 256, 5
    S = np.zeros((r, n))
    owner = g.integers(0, r, size=n)
    active = g.random(n) < 0.3
    S[owner[active], np.flatnonzero(active)] = np.abs(g.standard_normal(active.sum())) + 0.1
    A = np.abs(g.standard_normal((m, r)))
    res = run_ngmca(Problem(A @ S, r), NgmcaConfig(variant="direct"))
    assert evaluate(res.S, S).median() >= 40.0


@pytest.mark.parametrize("variant", VARIANTS)
def test_variants_return_feasible_factors(variant):
    d, prob = small_problem(3)
    res = run_ngmca(prob, NgmcaConfig(variant=variant, **QUICK))
    assert res.A.min() >= 0
    assert np.all(np.linalg.norm(res.A, axis=0) <= 1 + 1e-9)
    assert res.S.min() >= -1e-8
    assert res.iters == QUICK["K"]
    assert evaluate(res.S, d.S, d.Z).median() > 5.0


@pytest.mark.parametrize("variant", ["direct", "convolutive"])
def test_refinement_cost_non_increasing(variant):
    _, prob = small_problem(4, snr_db=20)
    res = run_ngmca(prob, NgmcaConfig(variant=variant, **QUICK))
    cost = res.diagnostics["cost"][res.diagnostics["refinement_start"]:]
    assert np.all(np.diff(cost) <= 1e-9 * np.abs(cost[:-1]))


def test_run_is_deterministic():
    _, prob = small_problem(5)
    cfg = NgmcaConfig(variant="analysis", seed=3, **QUICK)
    a, b = run_ngmca(prob, cfg), run_ngmca(prob, cfg)
    assert np.array_equal(a.S, b.S) and np.array_equal(a.A, b.A)


def test_coarse_scale_mask_keeps_zero_thresholds():
    _, prob = small_problem(6)
    W = OrthoWavelet(64, "symmlet4", 3)
    mask = W.coarse_mask()
    res = run_ngmca(prob, NgmcaConfig(variant="ortho", coarse_scale_mask=mask, **QUICK))
    assert np.all(res.lam[:, mask] == 0)
    assert np.all(res.diagnostics["lam"] >= 0)
    with pytest.raises(ValueError):
        run_ngmca(prob, NgmcaConfig(variant="ortho", coarse_scale_mask=mask[:10], **QUICK))


def test_reweighted_run_records_passes():
    _, prob = small_problem(7)
    res = run_ngmca(prob, NgmcaConfig(variant="analysis", reweighted=True, reweight_passes=2, **QUICK))
    assert sum(1 for f in res.flags if f[1] == "reweighted") == 2
    res = run_ngmca(prob, NgmcaConfig(variant="analysis", reweighted=True, **QUICK))
    assert sum(1 for f in res.flags if f[1] == "reweighted") == QUICK["refinement_iters"]


def test_thresholds_decrease_during_descent():
    _, prob = small_problem(8, snr_db=20)
    res = run_ngmca(prob, NgmcaConfig(variant="direct", **QUICK))
    lam = res.diagnostics["lam"]
    D = res.diagnostics["refinement_start"]
    assert np.all(np.diff(lam[:D], axis=0) <= 0)
    assert np.all(lam[D:] == lam[D])
    assert lam[D - 1].mean() < lam[0].mean()
