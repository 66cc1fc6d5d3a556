# ================================
# EXHAUSTIVE MAP REFERENCE
# ================================
#
# Enumerates every transmit vector, so only usable for small M^Nt.

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import softmax

from mimo_pipeline.config import get_settings
from mimo_pipeline.constellation import Constellation, bit_llrs_from_log_weights, prior_bit_llrs
from mimo_pipeline.errors import FramingError, InstanceTooLargeError

logger = logging.getLogger(__name__)

CHUNK_SIZE = 1 << 16


@dataclass
class ExactMarginals:
    symbol_pmfs: np.ndarray          # (Nt, M), rows sum to 1
    bit_llrs: np.ndarray             # (Nt, Q) extrinsic: posterior minus prior bit LLR
    posterior_bit_llrs: np.ndarray   # (Nt, Q)


def _enumerate(start: int, stop: int, nt: int, order: int) -> np.ndarray:
    flat = np.arange(start, stop)
    powers = order ** np.arange(nt - 1, -1, -1)
    return (flat[:, None] // powers) % order


def map_marginals(
    y: np.ndarray,
    H: np.ndarray,
    noise_var: float,
    priors: np.ndarray,
    c: Constellation,
    max_size: Optional[int] = None,
) -> ExactMarginals:
    """
    Exact per-antenna posteriors of p(u|y) proportional to N(y; Hu, s2 I) prod_k p_k(u_k).

    ``priors`` is (Nt, M) and need not be normalized. All weights are handled
    in the log domain and merged chunk by chunk.
    """
    y = np.asarray(y)
    H = np.asarray(H)
    nr, nt = H.shape
    priors = np.asarray(priors, dtype=float)
    if y.shape != (nr,) or priors.shape != (nt, c.order):
        raise FramingError(f"Expected y of shape ({nr},) and priors ({nt}, {c.order}), got {y.shape} and {priors.shape}")

    limit = get_settings().max_oracle_size if max_size is None else max_size
    total = c.order ** nt
    if total > limit:
        raise InstanceTooLargeError(f"M^Nt = {c.order}^{nt} = {total} exceeds the enumeration limit {limit}")

    with np.errstate(divide="ignore"):
        log_prior = np.log(priors / priors.sum(axis=-1, keepdims=True))

    log_marg = np.full((nt, c.order), -np.inf)
    antennas = np.arange(nt)
    for start in range(0, total, CHUNK_SIZE):
        idx = _enumerate(start, min(start + CHUNK_SIZE, total), nt, c.order)
        residual = y - c.points[idx] @ H.T
        log_w = -np.sum(np.abs(residual) ** 2, axis=-1) / noise_var + log_prior[antennas, idx].sum(axis=-1)
        peak = np.max(log_w)
        if not np.isfinite(peak):
            continue
        w = np.exp(log_w - peak)
        for k in range(nt):
            mass = np.bincount(idx[:, k], weights=w, minlength=c.order)
            with np.errstate(divide="ignore"):
                log_marg[k] = np.logaddexp(log_marg[k], np.log(mass) + peak)

    posterior_llrs = bit_llrs_from_log_weights(log_marg, c)
    return ExactMarginals(
        symbol_pmfs=softmax(log_marg, axis=-1),
        bit_llrs=posterior_llrs - prior_bit_llrs(np.exp(log_prior), c),
        posterior_bit_llrs=posterior_llrs,
    )


def map_symbol_decisions(marginals: ExactMarginals) -> np.ndarray:
    """Per-antenna MAP symbol indices."""
    return np.argmax(marginals.symbol_pmfs, axis=-1)
