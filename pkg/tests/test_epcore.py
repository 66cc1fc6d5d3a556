import math

import numpy as np
import pytest
from scipy.linalg import cho_factor, cho_solve

from mimo_pipeline.channel import complex_normal, sample_channel
from mimo_pipeline.constellation import llrs_to_prior, pmf_moments
from mimo_pipeline.epcore import (
    MIN_FACTOR_VARIANCE,
    GaussianFactorSet,
    NegativeVariancePolicy,
    cavity,
    compute_posterior,
    damp,
    detect,
    gaussian_product,
    get_detector_params,
    initial_factors,
    mmd_pass,
    moment_match,
    schedule_table,
    symbol_decisions,
    tilted_moments,
)
from mimo_pipeline.errors import ConfigurationError, FramingError


def test_scalar_posterior():
    factors = GaussianFactorSet(np.array([0.0 + 0j]), np.array([1.0]))
    q = compute_posterior(np.array([[1.0 + 0j]]), 1.0, np.array([2.0 + 0j]), factors)
    assert q.covariance[0, 0].real == pytest.approx(0.5)
    assert q.mean[0].real == pytest.approx(1.0)


def test_posterior_is_hermitian_positive_definite(rng):
    for _ in range(50):
        nt = int(rng.integers(1, 8))
        H = sample_channel(nt, nt + 1, rng)
        factors = GaussianFactorSet(complex_normal(nt, rng), rng.uniform(0.01, 3.0, nt))
        q = compute_posterior(H, 0.2, complex_normal(nt + 1, rng), factors)
        assert np.max(np.abs(q.covariance - q.covariance.conj().T)) < 1e-10
        assert np.all(np.imag(np.diag(q.covariance)) == 0)
        assert np.min(np.linalg.eigvalsh(q.covariance)) > 0


def test_unit_prior_factors_give_textbook_lmmse(rng):
    nt, nr, noise_var = 4, 6, 0.3
    H = sample_channel(nt, nr, rng)
    y = complex_normal(nr, rng)
    q = compute_posterior(H, noise_var, y, GaussianFactorSet(np.zeros(nt, dtype=complex), np.ones(nt)))
    hh = H.conj().T
    textbook = np.linalg.solve(hh @ H + noise_var * np.eye(nt), hh @ y)
    assert np.allclose(q.mean, textbook, atol=1e-10)


def test_marginal_variance_matches_scalar_formula(rng):
    h = complex_normal((3, 1), rng)
    q = compute_posterior(h, 0.5, complex_normal(3, rng), GaussianFactorSet(np.zeros(1, dtype=complex), np.array([0.7])))
    scalar = 1.0 / (np.sum(np.abs(h) ** 2) / 0.5 + 1.0 / 0.7)
    assert q.marginal_variances[0] == pytest.approx(scalar, rel=1e-10)


def test_batched_posterior_matches_per_block(rng):
    H = sample_channel(3, 4, rng)
    y = complex_normal((4, 5), rng)
    factors = GaussianFactorSet(complex_normal((5, 3), rng), rng.uniform(0.1, 2.0, (5, 3)))
    batched = compute_posterior(H, 0.1, y, factors)
    for p in range(5):
        single = compute_posterior(H, 0.1, y[:, p], GaussianFactorSet(factors.means[p], factors.variances[p]))
        assert np.allclose(batched.mean[p], single.mean)
        assert np.allclose(batched.covariance[p], single.covariance)


def test_posterior_agrees_with_dense_cholesky_solve(rng):
    nt, blocks, noise_var = 12, 4, 0.05
    H = sample_channel(nt, nt, rng)
    y = complex_normal((nt, blocks), rng)
    factors = GaussianFactorSet(complex_normal((blocks, nt), rng), rng.uniform(0.05, 2.0, (blocks, nt)))
    q = compute_posterior(H, noise_var, y, factors)
    hh = H.conj().T
    for p in range(blocks):
        precision = hh @ H / noise_var + np.diag(1.0 / factors.variances[p])
        rhs = hh @ y[:, p] / noise_var + factors.means[p] / factors.variances[p]
        factor = cho_factor(precision, lower=True)
        assert np.allclose(q.mean[p], cho_solve(factor, rhs), atol=1e-10)
        sigma = cho_solve(factor, np.eye(nt))
        assert np.allclose(q.marginal_variances[p], np.real(np.diag(sigma)), rtol=1e-10)
        assert np.allclose(q.covariance[p], sigma, atol=1e-10)
    upper = np.triu_indices(nt, 1)
    assert np.all(q.chol_inv[:, upper[0], upper[1]] == 0)


def test_cavity_examples():
    cav = cavity(1.0, 0.5, 0.0, 1.0)
    assert cav.valid and cav.variances == pytest.approx(1.0) and cav.means == pytest.approx(2.0)

    cav = cavity(0.3 - 0.2j, 0.4, 0.3 - 0.2j, 0.8)
    assert cav.means == pytest.approx(0.3 - 0.2j)

    cav = cavity(np.array([0.1, 0.1]), np.array([1.0, 1.0 - 1e-14]), np.array([0.0, 0.0]), np.array([1.0, 1.0]))
    assert cav.valid.tolist() == [False, False]


def test_cavity_recombination(rng):
    mu_t, var_t = complex_normal(200, rng), rng.uniform(0.5, 2.0, 200)
    mu_k, var_k = complex_normal(200, rng), var_t * rng.uniform(0.1, 0.9, 200)
    cav = cavity(mu_k, var_k, mu_t, var_t)
    mu, var = gaussian_product(cav.means, cav.variances, mu_t, var_t)
    assert np.allclose(var, var_k, rtol=1e-10)
    assert np.allclose(mu, mu_k, rtol=1e-10, atol=1e-10)


def test_tilted_moments_bpsk_closed_form(bpsk):
    tilted = tilted_moments(np.array([0.5]), np.array([1.0]), bpsk.uniform_prior(1), bpsk, eps=1e-8)
    assert tilted.means[0].real == pytest.approx(math.tanh(1.0), rel=1e-12)
    assert tilted.variances[0] == pytest.approx(1 - math.tanh(1.0) ** 2, rel=1e-12)


def test_tilted_moments_limits(qpsk, qam16):
    wide = tilted_moments(np.array([0.3 + 0.1j]), np.array([1e12]), qpsk.uniform_prior(1), qpsk, eps=0.0)
    assert abs(wide.means[0]) < 1e-9

    delta = np.zeros((1, 16))
    delta[0, 3] = 1.0
    point = tilted_moments(np.array([0.0]), np.array([0.5]), delta, qam16, eps=1e-8)
    assert point.means[0] == qam16.points[3]
    assert point.variances[0] == 1e-8


def test_tilted_moments_underflow_falls_back_to_nearest_point(qam16):
    far = np.array([50.0 + 50.0j])
    tilted = tilted_moments(far, np.array([1e-310]), qam16.uniform_prior(1), qam16, eps=1e-6)
    nearest = qam16.points[np.argmin(np.abs(qam16.points - far[0]))]
    assert tilted.means[0] == nearest
    assert tilted.variances[0] == 1e-6


def test_moment_match_examples():
    mu_new, var_new = moment_match(0.5, 0.2, 2.0, 1.0)
    assert var_new == pytest.approx(0.25)
    assert mu_new == pytest.approx(0.125)

    mu, var = gaussian_product(mu_new, var_new, 2.0, 1.0)
    assert var == pytest.approx(0.2, abs=1e-10)
    assert mu == pytest.approx(0.5, abs=1e-10)

    _, var_new = moment_match(0.5, 1.5, 2.0, 1.0)
    assert var_new < 0
    _, var_new = moment_match(0.5, 1.0, 2.0, 1.0)
    assert var_new == 0


def test_damping():
    new_mu, new_var = np.array([2.0 + 1j]), np.array([1.0])
    old_mu, old_var = np.array([0.0 + 0j]), np.array([1.0 / 3.0])
    mu, var = damp(new_mu, new_var, old_mu, old_var, 1.0)
    assert np.array_equal(mu, new_mu) and np.array_equal(var, new_var)
    mu, var = damp(new_mu, new_var, old_mu, old_var, 0.0)
    assert np.array_equal(mu, old_mu) and np.array_equal(var, old_var)

    mu, var = damp(np.array([2.0]), new_var, np.array([0.0]), old_var, 0.5)
    assert var[0] == pytest.approx(0.5)
    assert mu[0] == pytest.approx(0.5)

    for beta in (0.1, 0.5, 0.9):
        _, var = damp(new_mu, new_var, old_mu, old_var, beta)
        assert 1.0 <= 1.0 / var[0] <= 3.0


def test_mmd_pass_beta_zero_is_identity(rng, qam16):
    H = sample_channel(3, 3, rng)
    factors = GaussianFactorSet(complex_normal(3, rng), rng.uniform(0.2, 1.0, 3))
    out = mmd_pass(complex_normal(3, rng), H, 0.1, qam16.uniform_prior(3), factors, 1e-8, 0.0, "keep-old", qam16)
    assert np.array_equal(out.means, factors.means)
    assert np.array_equal(out.variances, factors.variances)


def test_mmd_pass_matches_scalar_step(bpsk):
    h, noise_var, y = 0.8, 0.5, 0.6 + 0j
    factors = GaussianFactorSet(np.array([0.0 + 0j]), np.array([1.0]))
    out = mmd_pass(np.array([y]), np.array([[h + 0j]]), noise_var, bpsk.uniform_prior(1), factors, 1e-8, 1.0,
                   NegativeVariancePolicy.KEEP_OLD, bpsk)

    # cavity of a single antenna is the likelihood N(u; y/h, s2/h^2)
    mu_e, var_e = y.real / h, noise_var / h ** 2
    w_plus, w_minus = math.exp(-(mu_e - 1) ** 2 / var_e), math.exp(-(mu_e + 1) ** 2 / var_e)
    mu_p = (w_plus - w_minus) / (w_plus + w_minus)
    var_p = 1 - mu_p ** 2
    var_new = var_p * var_e / (var_e - var_p)
    mu_new = var_new * (mu_p / var_p - mu_e / var_e)
    assert out.variances[0] == pytest.approx(var_new, rel=1e-9)
    assert out.means[0].real == pytest.approx(mu_new, rel=1e-9)


def test_negative_variance_policies(qpsk):
    # a tight cavity around a point midway between symbols makes the tilted
    # variance exceed the cavity variance
    H = np.array([[1.0 + 0j]])
    y = np.array([0.0 + 0j])
    factors = GaussianFactorSet(np.array([0.05 + 0.05j]), np.array([0.5]))
    prior = qpsk.uniform_prior(1)

    kept = mmd_pass(y, H, 0.01, prior, factors, 1e-8, 1.0, NegativeVariancePolicy.KEEP_OLD, qpsk)
    assert np.array_equal(kept.means, factors.means)
    assert np.array_equal(kept.variances, factors.variances)

    replaced = mmd_pass(y, H, 0.01, prior, factors, 1e-8, 1.0, NegativeVariancePolicy.USE_TILTED, qpsk)
    assert replaced.variances[0] >= MIN_FACTOR_VARIANCE
    assert replaced.variances[0] == pytest.approx(1.0, rel=1e-6)


def test_fixed_point_with_decoupled_antennas(rng, qam16):
    H = np.diag([1.2, 0.7, 1.5]).astype(complex)
    y = complex_normal(3, rng)
    prior = qam16.uniform_prior(3)
    factors = GaussianFactorSet(np.zeros(3, dtype=complex), np.ones(3))
    once = mmd_pass(y, H, 0.3, prior, factors, 1e-8, 1.0, "keep-old", qam16)
    twice = mmd_pass(y, H, 0.3, prior, once, 1e-8, 1.0, "keep-old", qam16)
    assert np.allclose(twice.means, once.means, atol=1e-8)
    assert np.allclose(twice.variances, once.variances, atol=1e-8)


def test_schedules():
    nubep = get_detector_params("nubep")
    assert [nubep.beta_at(t) for t in range(6)] == [min(math.exp(t / 1.5) / 10, 0.7) for t in range(6)]
    assert [round(nubep.beta_at(t), 4) for t in range(4)] == [0.1, 0.1948, 0.3794, 0.7]

    epd = get_detector_params("epd")
    assert [epd.eps_at(ell) for ell in range(1, 11)] == [2.0 ** -max(ell - 4, 1) for ell in range(1, 11)]
    assert [epd.eps_at(ell) for ell in range(1, 7)] == [0.5, 0.5, 0.5, 0.5, 0.5, 0.25]

    mpep = get_detector_params("mpep")
    assert mpep.self_iterations == 1 and mpep.beta_at(3) == 1.0 and mpep.eps_at(1) == 0.0
    assert mpep.policy is NegativeVariancePolicy.USE_TILTED
    assert get_detector_params("lmmse").self_iterations == 0

    table = schedule_table(nubep, 5)
    assert len(table["beta"]) == 6 and table["cost_per_turbo_iteration"] == "4 x O(Nt^3)"

    with pytest.raises(ConfigurationError):
        get_detector_params("zf")
    assert get_detector_params("nubep", {"self_iterations": 7}).self_iterations == 7


def test_lmmse_equals_zero_self_iterations(rng, qam16):
    H = sample_channel(4, 4, rng)
    y = complex_normal((4, 2), rng)
    priors = llrs_to_prior(rng.normal(0, 2, (2, 4, 4)), qam16)
    a = detect(get_detector_params("lmmse"), y, H, 0.2, priors, 0, qam16)
    b = detect(get_detector_params("epd", {"self_iterations": 0}), y, H, 0.2, priors, 0, qam16)
    assert np.array_equal(a.means, b.means) and np.array_equal(a.variances, b.variances)


def test_initial_factors_floor(qam16):
    delta = np.zeros((2, 16))
    delta[:, 0] = 1.0
    factors = initial_factors(delta, qam16)
    assert np.all(factors.variances == 1e-8)
    assert np.array_equal(factors.means, pmf_moments(delta, qam16)[0])


def test_detect_noiseless_recovers_symbols(rng, qam16):
    H = sample_channel(4, 8, rng)
    sent = rng.integers(0, 16, (4, 6))
    y = H @ qam16.points[sent]
    prior = qam16.uniform_prior(6, 4)
    for name in ("nubep", "mpep", "epd", "lmmse"):
        cav = detect(get_detector_params(name), y, H, 1e-4, prior, 0, qam16)
        assert cav.valid.all()
        assert np.array_equal(symbol_decisions(cav, prior, qam16), sent.T)


def test_detect_rejects_mismatched_priors(rng, qam16):
    H = sample_channel(3, 3, rng)
    with pytest.raises(FramingError):
        detect(get_detector_params("nubep"), complex_normal(3, rng), H, 0.1, qam16.uniform_prior(2), 0, qam16)
