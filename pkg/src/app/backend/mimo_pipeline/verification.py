# ================================
# VERIFICATION SUITE
# ================================
#
# Randomized identity checks, exhaustive-MAP comparisons and the parameter
# schedules. Exposed through `verify` on the CLI and POST /verify on the API.

import json
import logging
import math
import time
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel

from mimo_pipeline.channel import complex_normal, sample_channel, snr_to_noise_var
from mimo_pipeline.constellation import (
    SUPPORTED_ORDERS,
    build_qam,
    constellation_by_name,
    extrinsic_llr,
    llrs_to_prior,
)
from mimo_pipeline.epcore import (
    GaussianFactorSet,
    NegativeVariancePolicy,
    cavity,
    compute_posterior,
    damp,
    detect,
    gaussian_product,
    get_detector_params,
    mmd_pass,
    moment_match,
    symbol_decisions,
    tilted_moments,
)
from mimo_pipeline.oracle import map_marginals, map_symbol_decisions

logger = logging.getLogger(__name__)


class CheckResult(BaseModel):
    name: str
    passed: bool
    detail: str
    elapsed_s: float = 0.0


class ComplexityProfile(BaseModel):
    nt_values: List[int]
    median_seconds: List[float]
    slope: float


def _check(name: str, fn: Callable[[], tuple[bool, str]]) -> CheckResult:
    start_time = time.perf_counter()
    try:
        passed, detail = fn()
    except Exception as e:
        logger.error(f"❌ {name} raised: {e}")
        passed, detail = False, f"raised {type(e).__name__}: {e}"
    result = CheckResult(name=name, passed=passed, detail=detail, elapsed_s=time.perf_counter() - start_time)
    logger.info(f"{'✅' if passed else '❌'} {name}: {detail}")
    return result


def _random_factors(rng: np.random.Generator, shape) -> GaussianFactorSet:
    return GaussianFactorSet(
        means=complex_normal(shape, rng),
        variances=rng.uniform(0.05, 2.0, shape),
    )


# ================================
# ALGEBRAIC IDENTITIES
# ================================

def check_identities(instances: int = 1000, seed: int = 0) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst = {"recombination": 0.0, "moment_match": 0.0, "damping": 0.0, "hermitian": 0.0, "pmf": 0.0}
    min_eig = np.inf
    qam16 = build_qam(16)

    for _ in range(instances):
        nt = int(rng.integers(1, 7))
        nr = nt + int(rng.integers(0, 3))
        H = sample_channel(nt, nr, rng)
        factors = _random_factors(rng, (nt,))
        posterior = compute_posterior(H, float(rng.uniform(0.05, 2.0)), complex_normal(nr, rng), factors)
        sigma = posterior.covariance
        worst["hermitian"] = max(worst["hermitian"], float(np.max(np.abs(sigma - sigma.conj().T))))
        min_eig = min(min_eig, float(np.min(np.linalg.eigvalsh(sigma))))

        var_k = posterior.marginal_variances
        cav = cavity(posterior.mean, var_k, factors.means, factors.variances)
        if np.all(cav.valid):
            mu_back, var_back = gaussian_product(cav.means, cav.variances, factors.means, factors.variances)
            worst["recombination"] = max(
                worst["recombination"],
                float(np.max(np.abs(var_back - var_k) / var_k)),
                float(np.max(np.abs(mu_back - posterior.mean) / (1.0 + np.abs(posterior.mean)))),
            )

        mu_e, var_e = complex_normal(1, rng)[0], float(rng.uniform(0.1, 3.0))
        tilted = tilted_moments(mu_e, var_e, qam16.uniform_prior(), qam16, eps=1e-8)
        mu_new, var_new = moment_match(tilted.means, tilted.variances, mu_e, var_e)
        if var_new > 0:
            mu_rec, var_rec = gaussian_product(mu_new, var_new, mu_e, var_e)
            worst["moment_match"] = max(
                worst["moment_match"],
                float(abs(var_rec - tilted.variances) / tilted.variances),
                float(abs(mu_rec - tilted.means)),
            )

        old = _random_factors(rng, (nt,))
        new = _random_factors(rng, (nt,))
        for beta, target in ((1.0, new), (0.0, old)):
            mu_d, var_d = damp(new.means, new.variances, old.means, old.variances, beta)
            worst["damping"] = max(
                worst["damping"],
                float(np.max(np.abs(mu_d - target.means))),
                float(np.max(np.abs(var_d - target.variances))),
            )

        llrs = rng.normal(0.0, 4.0, (nt, qam16.bits_per_symbol))
        worst["pmf"] = max(worst["pmf"], float(np.max(np.abs(llrs_to_prior(llrs, qam16).sum(-1) - 1.0))))

    passed = (
        worst["recombination"] < 1e-10
        and worst["moment_match"] < 1e-8
        and worst["damping"] == 0.0
        and worst["hermitian"] < 1e-10
        and min_eig > 0
        and worst["pmf"] < 1e-12
    )
    detail = ", ".join(f"{k}={v:.1e}" for k, v in worst.items()) + f", min_eig={min_eig:.1e}"
    return passed, detail


# ================================
# EXHAUSTIVE MAP COMPARISONS
# ================================

def check_single_antenna_oracle(instances: int = 200, seed: int = 1) -> tuple[bool, str]:
    """Nt=1: the EP cavity is the likelihood, so its LLRs equal the exact ones."""
    rng = np.random.default_rng(seed)
    params = get_detector_params("nubep")
    worst = 0.0
    for _ in range(instances):
        c = build_qam(int(rng.choice(SUPPORTED_ORDERS)))
        nr = int(rng.integers(1, 4))
        H = sample_channel(1, nr, rng)
        noise_var = snr_to_noise_var(float(rng.uniform(0.0, 20.0)), 1)
        u = c.points[rng.integers(c.order)]
        y = H[:, 0] * u + complex_normal(nr, rng, noise_var)
        cav = detect(params, y, H, noise_var, c.uniform_prior(1), 0, c)
        if not cav.valid[0]:
            return False, "single-antenna cavity was invalid"
        ep_llrs = extrinsic_llr(cav.means, cav.variances, c, clip=None)
        exact = map_marginals(y, H, noise_var, c.uniform_prior(1), c).bit_llrs
        worst = max(worst, float(np.max(np.abs(ep_llrs - exact))))
    return worst < 1e-6, f"max |LLR_ep - LLR_map| = {worst:.2e}"


def symbol_error_rates(
    draws: int = 100_000,
    es_n0_db: float = 10.0,
    nt: int = 2,
    constellation: str = "qpsk",
    variants: Sequence[str] = ("nubep", "lmmse"),
    seed: int = 2,
) -> dict:
    """
    Hard-decision SER of the exact MAP and the EP variants on shared draws.

    ``es_n0_db`` is the per-antenna Es/N0; the sweep axis Nt*Es/N0 sits
    10*log10(Nt) dB above it.
    """
    rng = np.random.default_rng(seed)
    c = constellation_by_name(constellation)
    noise_var = snr_to_noise_var(es_n0_db + 10.0 * math.log10(nt), nt)
    prior = c.uniform_prior(nt)
    params = {name: get_detector_params(name) for name in variants}
    errors = {name: 0 for name in ("map",) + tuple(variants)}
    for _ in range(draws):
        H = sample_channel(nt, nt, rng)
        sent = rng.integers(0, c.order, nt)
        y = H @ c.points[sent] + complex_normal(nt, rng, noise_var)
        errors["map"] += int(np.count_nonzero(map_symbol_decisions(map_marginals(y, H, noise_var, prior, c)) != sent))
        for name, p in params.items():
            decisions = symbol_decisions(detect(p, y, H, noise_var, prior, 0, c), prior, c)
            errors[name] += int(np.count_nonzero(decisions != sent))
    total = draws * nt
    return {name: count / total for name, count in errors.items()} | {"symbols": total}


def check_ser_against_map(draws: int = 100_000) -> tuple[bool, str]:
    """
    MAP lower-bounds nuBEP and nuBEP does not lose to LMMSE, both within a 2-sigma
    Monte-Carlo band. The nuBEP/MAP ratio is reported; with uniform priors the
    first turbo iteration runs at beta=0.1 and stays above MAP by more than 10%.
    """
    ser = symbol_error_rates(draws=draws)
    band = 2.0 * math.sqrt(max(ser["map"], 1.0 / ser["symbols"]) / ser["symbols"])
    above_map = ser["nubep"] >= ser["map"] - band and ser["lmmse"] >= ser["map"] - band
    beats_lmmse = ser["nubep"] <= ser["lmmse"] + band
    ratio = ser["nubep"] / ser["map"] if ser["map"] > 0 else math.inf
    detail = (
        f"SER map={ser['map']:.3e}, nubep={ser['nubep']:.3e}, lmmse={ser['lmmse']:.3e}, "
        f"nubep/map={ratio:.2f}"
    )
    return above_map and beats_lmmse, detail


# ================================
# DEGENERATE CASES AND SCHEDULES
# ================================

def check_lmmse_degeneracy(instances: int = 100, seed: int = 3) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    lmmse = get_detector_params("lmmse")
    zero_pass = get_detector_params("nubep", {"self_iterations": 0})
    c = build_qam(16)
    for i in range(instances):
        nt = int(rng.integers(1, 9))
        H = sample_channel(nt, nt, rng)
        y = complex_normal((nt, 3), rng)
        priors = llrs_to_prior(rng.normal(0.0, 2.0, (3, nt, c.bits_per_symbol)), c)
        a = detect(lmmse, y, H, 0.1, priors, 1, c)
        b = detect(zero_pass, y, H, 0.1, priors, 1, c)
        if not (np.array_equal(a.means, b.means) and np.array_equal(a.variances, b.variances)):
            return False, f"instance {i} differs"
    return True, f"{instances} instances bit-identical"


def check_schedules() -> tuple[bool, str]:
    nubep = get_detector_params("nubep")
    epd = get_detector_params("epd")
    betas_ok = all(nubep.beta_at(t) == min(math.exp(t / 1.5) / 10, 0.7) for t in range(6))
    eps_ok = all(epd.eps_at(ell) == 2.0 ** -max(ell - 4, 1) for ell in range(1, 11))
    return betas_ok and eps_ok, f"beta(0..5)={[round(nubep.beta_at(t), 4) for t in range(6)]}"


# ================================
# COMPLEXITY
# ================================

def complexity_profile(
    nt_values: Sequence[int] = (8, 16, 32, 64),
    repeats: int = 7,
    blocks: int = 1024,
    constellation: str = "qpsk",
    seed: int = 4,
) -> ComplexityProfile:
    """
    Median wall time of one moment-matching pass per Nt (Nr = Nt) and the log-log slope.

    Each pass covers ``blocks`` channel uses at once, as the turbo loop does for a
    codeword, so the per-call overhead is shared and the O(Nt^3) factorization and
    solves of every block carry the timing.
    """
    rng = np.random.default_rng(seed)
    c = constellation_by_name(constellation)
    medians = []
    for nt in nt_values:
        H = sample_channel(nt, nt, rng)
        y = complex_normal((nt, blocks), rng)
        prior = c.uniform_prior(blocks, nt)
        factors = GaussianFactorSet(np.zeros((blocks, nt), dtype=complex), np.ones((blocks, nt)))
        mmd_pass(y, H, 0.1, prior, factors, 1e-8, 0.5, NegativeVariancePolicy.KEEP_OLD, c)
        timings = []
        for _ in range(repeats):
            start_time = time.perf_counter()
            mmd_pass(y, H, 0.1, prior, factors, 1e-8, 0.5, NegativeVariancePolicy.KEEP_OLD, c)
            timings.append(time.perf_counter() - start_time)
        medians.append(float(np.median(timings)))
        logger.info(f"⏱️ Nt={nt}: {medians[-1] * 1e3:.2f} ms per pass over {blocks} channel uses")
    slope = float(np.polyfit(np.log(nt_values), np.log(medians), 1)[0])
    return ComplexityProfile(nt_values=list(nt_values), median_seconds=medians, slope=slope)


def check_complexity_slope() -> tuple[bool, str]:
    profile = complexity_profile()
    return abs(profile.slope - 3.0) <= 0.5, f"log-log slope {profile.slope:.2f}"


# ================================
# GOLDEN REFERENCE
# ================================

def oracle_reference_instance(seed: int = 2024) -> dict:
    """Fixed 2x2 QPSK instance at 10 dB with uniform priors and its exact marginals."""
    rng = np.random.default_rng(seed)
    c = build_qam(4)
    H = sample_channel(2, 2, rng)
    noise_var = snr_to_noise_var(10.0, 2)
    y = H @ c.points[rng.integers(0, 4, 2)] + complex_normal(2, rng, noise_var)
    marginals = map_marginals(y, H, noise_var, c.uniform_prior(2), c)
    return {
        "constellation": c.name,
        "noise_var": noise_var,
        "H_real": H.real.tolist(),
        "H_imag": H.imag.tolist(),
        "y_real": y.real.tolist(),
        "y_imag": y.imag.tolist(),
        "symbol_pmfs": marginals.symbol_pmfs.tolist(),
        "bit_llrs": marginals.bit_llrs.tolist(),
    }


def write_oracle_golden(path: Union[str, Path], seed: int = 2024) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(oracle_reference_instance(seed), indent=2), encoding="utf-8")
    logger.info(f"✅ Oracle reference written to {path}")
    return path


# ================================
# SUITE
# ================================

def run_verification(slow: bool = False, golden_out: Optional[Union[str, Path]] = None) -> List[CheckResult]:
    checks: List[tuple[str, Callable[[], tuple[bool, str]]]] = [
        ("identities", check_identities),
        ("single_antenna_oracle", check_single_antenna_oracle),
        ("lmmse_degeneracy", check_lmmse_degeneracy),
        ("schedules", check_schedules),
    ]
    if slow:
        checks += [
            ("ser_against_map", check_ser_against_map),
            ("complexity_slope", check_complexity_slope),
        ]
    results = [_check(name, fn) for name, fn in checks]
    if golden_out is not None:
        write_oracle_golden(golden_out)
    return results
