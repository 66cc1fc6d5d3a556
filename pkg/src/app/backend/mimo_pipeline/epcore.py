# ================================
# EXPECTATION PROPAGATION MIMO DETECTION
# ================================
#
# Gaussian bookkeeping stays in (mean, variance) form; damping mixes precisions.
# Arrays carry a leading block axis: factors are (P, Nt), priors (P, Nt, M).

import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Literal, Optional

import numpy as np
from pydantic import BaseModel, Field
from scipy.special import logsumexp

from mimo_pipeline.config import DETECTOR_PRESETS
from mimo_pipeline.constellation import Constellation, nearest_indices, pmf_moments, symbol_log_likelihoods
from mimo_pipeline.errors import ConfigurationError, FramingError, NumericalError

# Cavity denominators below this fraction of the factor variance are skipped
CAVITY_GUARD = 1e-12
# Factor variances never drop below this (near point-mass priors, tilted replacements)
MIN_FACTOR_VARIANCE = 1e-12
# Floor for factor initialization from decoder priors
PRIOR_VARIANCE_FLOOR = 1e-8


class NegativeVariancePolicy(str, Enum):
    KEEP_OLD = "keep-old"
    USE_TILTED = "use-tilted"


class DetectorParams(BaseModel):
    """
    Parameterization of one EP detector variant.

    ``beta_at(t)`` gives the damping used during turbo iteration ``t`` and
    ``eps_at(l)`` the variance floor of self-iteration ``l`` (1-based).
    """
    name: str
    self_iterations: int = Field(ge=0)
    beta_schedule: Literal["constant", "exponential"] = "constant"
    beta: float = Field(default=1.0, ge=0.0, le=1.0)
    beta_divisor: float = Field(default=10.0, gt=0.0)
    beta_rate: float = Field(default=1.5, gt=0.0)
    beta_cap: float = Field(default=0.7, ge=0.0, le=1.0)
    eps_schedule: Literal["constant", "halving"] = "constant"
    eps: float = Field(default=0.0, ge=0.0)
    eps_hold: int = Field(default=4, ge=0)
    policy: NegativeVariancePolicy = NegativeVariancePolicy.KEEP_OLD
    uniform_moment_prior: bool = False

    def beta_at(self, t: int) -> float:
        if self.beta_schedule == "exponential":
            return min(math.exp(t / self.beta_rate) / self.beta_divisor, self.beta_cap)
        return self.beta

    def eps_at(self, ell: int) -> float:
        if self.eps_schedule == "halving":
            return 2.0 ** -max(ell - self.eps_hold, 1)
        return self.eps


def get_detector_params(name: str, overrides: Optional[Dict[str, Any]] = None) -> DetectorParams:
    key = name.strip().lower()
    if key not in DETECTOR_PRESETS:
        raise ConfigurationError(f"Unknown detector '{name}'. Choose one of: {', '.join(DETECTOR_PRESETS)}")
    return DetectorParams(name=key, **{**DETECTOR_PRESETS[key], **(overrides or {})})


# ================================
# DOMAIN TYPES
# ================================

@dataclass
class GaussianFactorSet:
    means: np.ndarray
    variances: np.ndarray

    def copy(self) -> "GaussianFactorSet":
        return GaussianFactorSet(self.means.copy(), self.variances.copy())


@dataclass
class PosteriorGaussian:
    """
    q(u) = N(mean, Sigma_q) kept as its marginal variances and the inverse
    Cholesky factor L^-1 of the precision, so Sigma_q = L^-H L^-1.
    """
    mean: np.ndarray
    variances: np.ndarray
    chol_inv: np.ndarray

    @property
    def marginal_variances(self) -> np.ndarray:
        return self.variances.copy()

    @property
    def covariance(self) -> np.ndarray:
        chol_inv_h = np.conj(np.swapaxes(self.chol_inv, -1, -2))
        covariance = chol_inv_h @ self.chol_inv
        return 0.5 * (covariance + np.conj(np.swapaxes(covariance, -1, -2)))


@dataclass
class CavitySet:
    means: np.ndarray
    variances: np.ndarray
    valid: np.ndarray


@dataclass
class TiltedMoments:
    means: np.ndarray
    variances: np.ndarray


# ================================
# GAUSSIAN ALGEBRA
# ================================

def gaussian_product(mu_a, var_a, mu_b, var_b) -> tuple[np.ndarray, np.ndarray]:
    """Normalized product of two scalar Gaussians."""
    precision = 1.0 / np.asarray(var_a) + 1.0 / np.asarray(var_b)
    variance = 1.0 / precision
    return variance * (np.asarray(mu_a) / var_a + np.asarray(mu_b) / var_b), variance


def _solve_lower(lower: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """
    Forward substitution for a stack of lower-triangular systems L X = B.

    ``lower`` is (..., n, n) and ``rhs`` (..., n, k). Rows are swept in order
    while every block of the stack advances together.
    """
    n = lower.shape[-1]
    batch = np.broadcast_shapes(lower.shape[:-2], rhs.shape[:-2])
    out = np.empty(batch + rhs.shape[-2:], dtype=np.result_type(lower, rhs))
    for i in range(n):
        acc = rhs[..., i, :] - np.einsum("...j,...jk->...k", lower[..., i, :i], out[..., :i, :])
        out[..., i, :] = acc / lower[..., i, i, None]
    return out


def _solve_upper(upper: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Back substitution U X = B, run as forward substitution on the index-reversed system."""
    return _solve_lower(upper[..., ::-1, ::-1], rhs[..., ::-1, :])[..., ::-1, :]


def _posterior_from_gram(
    gram: np.ndarray, matched: np.ndarray, noise_var: float, factors: GaussianFactorSet
) -> PosteriorGaussian:
    nt = gram.shape[-1]
    idx = np.arange(nt)
    precision = np.array(np.broadcast_to(gram / noise_var, factors.variances.shape[:-1] + (nt, nt)))
    precision[..., idx, idx] += 1.0 / factors.variances
    rhs = matched / noise_var + factors.means / factors.variances
    try:
        chol = np.linalg.cholesky(precision)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"Posterior precision is not positive definite: {exc}") from exc

    # one forward sweep solves L z = rhs and L X = I together
    stacked = np.concatenate([rhs[..., None], np.broadcast_to(np.eye(nt), precision.shape)], axis=-1)
    forward = _solve_lower(chol, stacked)
    chol_inv = forward[..., 1:]
    mean = _solve_upper(np.conj(np.swapaxes(chol, -1, -2)), forward[..., :1])[..., 0]
    variances = np.sum(np.abs(chol_inv) ** 2, axis=-2)
    return PosteriorGaussian(mean=mean, variances=variances, chol_inv=chol_inv)


def _gram_terms(H: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """H^H H and H^H y arranged as (..., Nt) with blocks on the leading axis."""
    H = np.asarray(H)
    y = np.asarray(y)
    if y.shape[0] != H.shape[0]:
        raise FramingError(f"Received vector has {y.shape[0]} entries, channel has Nr={H.shape[0]}")
    hh = np.conj(H.T)
    return hh @ H, (hh @ y).T


def compute_posterior(H: np.ndarray, noise_var: float, y: np.ndarray, factors: GaussianFactorSet) -> PosteriorGaussian:
    """
    Joint Gaussian q(u) = N(mu_q, Sigma_q) with
    Sigma_q = (H^H H / s2 + diag(var_t)^-1)^-1 and
    mu_q = Sigma_q (H^H y / s2 + diag(var_t)^-1 mu_t).

    One Cholesky factorization serves both the covariance and the mean.
    """
    gram, matched = _gram_terms(H, y)
    return _posterior_from_gram(gram, matched, noise_var, factors)


def cavity(mu_k, var_k, mu_t, var_t, guard: float = CAVITY_GUARD) -> CavitySet:
    """Divide the factor out of the posterior marginal; invalid where var_t - var_k <= guard*var_t."""
    mu_k, var_k = np.asarray(mu_k), np.asarray(var_k, dtype=float)
    mu_t, var_t = np.asarray(mu_t), np.asarray(var_t, dtype=float)
    denom = var_t - var_k
    valid = denom > guard * var_t
    safe = np.where(valid, denom, 1.0)
    variances = np.where(valid, var_k * var_t / safe, np.nan)
    means = np.where(valid, (mu_k * var_t - mu_t * var_k) / safe, np.nan)
    return CavitySet(means=means, variances=variances, valid=valid)


def tilted_moments(mu_e, var_e, probs: np.ndarray, c: Constellation, eps: float) -> TiltedMoments:
    """
    Moments of q_E(u) p_D(u) over the alphabet, evaluated in the log domain.

    Variances are floored at ``eps``. If every weight vanishes the nearest point
    is taken as a point mass.
    """
    mu_e = np.asarray(mu_e)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        log_w = np.log(np.asarray(probs, dtype=float)) + symbol_log_likelihoods(mu_e, var_e, c)
        norm = logsumexp(log_w, axis=-1, keepdims=True)
        weights = np.exp(log_w - np.where(np.isfinite(norm), norm, 0.0))
    finite = np.isfinite(norm[..., 0])
    weights = np.where(finite[..., None], weights, 0.0)
    means = weights @ c.points
    variances = np.maximum(weights @ c.energies - np.abs(means) ** 2, 0.0)
    if not np.all(finite):
        fallback = c.points[nearest_indices(np.nan_to_num(mu_e), c)]
        means = np.where(finite, means, fallback)
        variances = np.where(finite, variances, 0.0)
    return TiltedMoments(means=means, variances=np.maximum(variances, eps))


def moment_match(mu_p, var_p, mu_e, var_e) -> tuple[np.ndarray, np.ndarray]:
    """
    New factor moments such that N(mu_new, var_new) x N(mu_e, var_e) has the
    tilted moments. ``var_new`` may be negative; it is 0 where var_e == var_p.
    """
    mu_p, var_p = np.asarray(mu_p), np.asarray(var_p, dtype=float)
    mu_e, var_e = np.asarray(mu_e), np.asarray(var_e, dtype=float)
    denom = var_e - var_p
    nonzero = denom != 0
    safe = np.where(nonzero, denom, 1.0)
    var_new = np.where(nonzero, var_p * var_e / safe, 0.0)
    mu_new = np.where(nonzero, (mu_p * var_e - mu_e * var_p) / safe, 0.0)
    return mu_new, var_new


def damp(mu_new, var_new, mu_old, var_old, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """Convex combination in the precision domain; beta=1 keeps the new factor."""
    if beta == 1.0:
        return np.array(mu_new, copy=True), np.array(var_new, dtype=float, copy=True)
    if beta == 0.0:
        return np.array(mu_old, copy=True), np.array(var_old, dtype=float, copy=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = beta / var_new + (1.0 - beta) / var_old
        variance = 1.0 / precision
        mean = variance * (beta * mu_new / var_new + (1.0 - beta) * mu_old / var_old)
    return mean, variance


# ================================
# MOMENT MATCHING AND DAMPING PASS
# ================================

def _mmd_step(
    gram: np.ndarray,
    matched: np.ndarray,
    noise_var: float,
    probs: np.ndarray,
    factors: GaussianFactorSet,
    eps: float,
    beta: float,
    policy: NegativeVariancePolicy,
    c: Constellation,
) -> tuple[GaussianFactorSet, CavitySet]:
    posterior = _posterior_from_gram(gram, matched, noise_var, factors)
    cav = cavity(posterior.mean, posterior.marginal_variances, factors.means, factors.variances)

    mu_e = np.where(cav.valid, cav.means, 0.0)
    var_e = np.where(cav.valid, cav.variances, 1.0)
    tilted = tilted_moments(mu_e, var_e, probs, c, eps)
    mu_new, var_new = moment_match(tilted.means, tilted.variances, mu_e, var_e)

    degenerate = ~np.isfinite(var_new) | (var_new == 0)
    mu_d, var_d = damp(
        np.where(degenerate, 0.0, mu_new),
        np.where(degenerate, 1.0, var_new),
        factors.means,
        factors.variances,
        beta,
    )
    negative = degenerate | ~(var_d > 0) | ~np.isfinite(var_d)

    if policy is NegativeVariancePolicy.USE_TILTED:
        fix_mu, fix_var = tilted.means, tilted.variances
    else:
        fix_mu, fix_var = factors.means, factors.variances

    means = np.where(negative, fix_mu, mu_d)
    variances = np.maximum(np.where(negative, fix_var, var_d), MIN_FACTOR_VARIANCE)
    # skipped antennas keep their factor untouched
    means = np.where(cav.valid, means, factors.means)
    variances = np.where(cav.valid, variances, factors.variances)
    return GaussianFactorSet(means=means, variances=variances), cav


def mmd_pass(
    y: np.ndarray,
    H: np.ndarray,
    noise_var: float,
    probs: np.ndarray,
    factors: GaussianFactorSet,
    eps: float,
    beta: float,
    policy: NegativeVariancePolicy,
    c: Constellation,
) -> GaussianFactorSet:
    """
    One moment-matching-and-damping pass over all antennas: posterior, cavities,
    tilted moments with the eps floor, moment matching, damping and the
    negative-variance policy. Antennas with an invalid cavity are skipped.
    """
    gram, matched = _gram_terms(H, y)
    updated, _ = _mmd_step(gram, matched, noise_var, probs, factors, eps, beta, NegativeVariancePolicy(policy), c)
    return updated


# ================================
# DETECTOR
# ================================

def initial_factors(priors: np.ndarray, c: Constellation) -> GaussianFactorSet:
    """Factors set to the moments of the decoder priors."""
    means, variances = pmf_moments(priors, c)
    return GaussianFactorSet(means=means, variances=np.maximum(variances, PRIOR_VARIANCE_FLOOR))


def _keep_valid(previous: CavitySet, current: CavitySet) -> CavitySet:
    return CavitySet(
        means=np.where(current.valid, current.means, previous.means),
        variances=np.where(current.valid, current.variances, previous.variances),
        valid=current.valid | previous.valid,
    )


def detect(
    params: DetectorParams,
    y: np.ndarray,
    H: np.ndarray,
    noise_var: float,
    priors: np.ndarray,
    t: int,
    c: Constellation,
) -> CavitySet:
    """
    Extrinsic Gaussians q_E(u_k) for every block and antenna.

    ``y`` is (Nr,) or (Nr, P); ``priors`` is (Nt, M) or (P, Nt, M). The factors
    start at the prior moments, go through ``params.self_iterations`` passes and
    the cavities of the final factors are returned. Antennas whose final cavity
    is degenerate report their last valid cavity from the self-iterations.
    """
    priors = np.asarray(priors, dtype=float)
    gram, matched = _gram_terms(H, y)
    if matched.shape != priors.shape[:-1]:
        raise FramingError(f"Priors of shape {priors.shape} do not match {matched.shape} received symbols")

    factors = initial_factors(priors, c)
    moment_priors = c.uniform_prior(*priors.shape[:-1]) if params.uniform_moment_prior else priors
    beta = params.beta_at(t)

    tracked = CavitySet(
        means=np.full(factors.means.shape, np.nan, dtype=complex),
        variances=np.full(factors.variances.shape, np.nan),
        valid=np.zeros(factors.variances.shape, dtype=bool),
    )
    for ell in range(1, params.self_iterations + 1):
        factors, cav = _mmd_step(
            gram, matched, noise_var, moment_priors, factors, params.eps_at(ell), beta, params.policy, c
        )
        tracked = _keep_valid(tracked, cav)

    posterior = _posterior_from_gram(gram, matched, noise_var, factors)
    final = cavity(posterior.mean, posterior.marginal_variances, factors.means, factors.variances)
    return _keep_valid(tracked, final)


def symbol_decisions(cavities: CavitySet, priors: np.ndarray, c: Constellation) -> np.ndarray:
    """Alphabet indices maximizing q_E(u) p_D(u); the prior alone where no cavity exists."""
    mu_e = np.where(cavities.valid, cavities.means, 0.0)
    var_e = np.where(cavities.valid, cavities.variances, np.inf)
    with np.errstate(divide="ignore"):
        score = np.log(np.asarray(priors, dtype=float)) + symbol_log_likelihoods(mu_e, var_e, c)
    return np.argmax(score, axis=-1)


def schedule_table(params: DetectorParams, turbo_iters: int) -> Dict[str, Any]:
    """Damping per turbo iteration, floor per self-iteration and the cost order."""
    return {
        "variant": params.name,
        "self_iterations": params.self_iterations,
        "policy": params.policy.value,
        "uniform_moment_prior": params.uniform_moment_prior,
        "beta": [params.beta_at(t) for t in range(turbo_iters + 1)],
        "eps": [params.eps_at(ell) for ell in range(1, params.self_iterations + 1)],
        "cost_per_turbo_iteration": f"{params.self_iterations + 1} x O(Nt^3)",
    }
