# ================================
# QAM ALPHABETS, GRAY LABELS AND SOFT (DE)MAPPING
# ================================

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
from scipy.special import logsumexp, softmax

from mimo_pipeline.errors import ConfigurationError, FramingError, InvalidCavityError

SUPPORTED_ORDERS = (2, 4, 16, 64, 128, 256)

CONSTELLATION_NAMES: Dict[str, int] = {
    "bpsk": 2,
    "qpsk": 4,
    "16qam": 16,
    "64qam": 64,
    "128qam": 128,
    "256qam": 256,
}

# Detector -> decoder LLR magnitude limit
DEFAULT_LLR_CLIP = 5.0


@dataclass(frozen=True, eq=False)
class Constellation:
    """
    Unit-energy complex alphabet with a Gray bit labeling.

    ``points[m]`` carries the label ``labels[m]``, which is the binary expansion
    of ``m`` (most significant bit first). The first ``bits_i`` label bits select
    the in-phase level and the remaining bits select the quadrature level.
    """
    order: int
    bits_per_symbol: int
    points: np.ndarray
    labels: np.ndarray
    name: str = ""
    grid: tuple = field(default=(1, 1))

    @property
    def energies(self) -> np.ndarray:
        return np.abs(self.points) ** 2

    def uniform_prior(self, *shape: int) -> np.ndarray:
        """Equiprobable pmf broadcast to ``shape + (M,)``."""
        return np.full(shape + (self.order,), 1.0 / self.order)


def _gray(i: np.ndarray) -> np.ndarray:
    return i ^ (i >> 1)


def _axis_levels(num_bits: int) -> np.ndarray:
    """Amplitudes of a Gray-coded PAM axis, indexed by the axis label."""
    levels = 1 << num_bits
    index = np.arange(levels)
    amplitude = (levels - 1) - 2.0 * index  # label 0 sits on the positive edge
    by_label = np.empty(levels)
    by_label[_gray(index)] = amplitude
    return by_label


def build_qam(order: int) -> Constellation:
    """
    Build the Gray-labelled QAM alphabet of size ``order``.

    Even ``log2(order)`` gives a square grid; 128-QAM is an 8x16 rectangle with
    independent Gray coding per axis; 2 is BPSK on the real line.
    """
    if order not in SUPPORTED_ORDERS:
        raise ConfigurationError(
            f"Unsupported constellation size M={order}. Supported: {', '.join(map(str, SUPPORTED_ORDERS))}"
        )

    bits_per_symbol = int(np.log2(order))
    labels = ((np.arange(order)[:, None] >> np.arange(bits_per_symbol - 1, -1, -1)) & 1).astype(np.uint8)

    if order == 2:
        points = np.array([1.0 + 0j, -1.0 + 0j])
        return Constellation(order, 1, points, labels, name="bpsk", grid=(2, 1))

    bits_q = (bits_per_symbol + 1) // 2
    bits_i = bits_per_symbol - bits_q
    amp_i = _axis_levels(bits_i)
    amp_q = _axis_levels(bits_q)

    symbol = np.arange(order)
    points = amp_i[symbol >> bits_q] + 1j * amp_q[symbol & ((1 << bits_q) - 1)]
    points = points / np.sqrt(np.mean(np.abs(points) ** 2))

    name = "qpsk" if order == 4 else f"{order}qam"
    return Constellation(order, bits_per_symbol, points, labels, name=name, grid=(1 << bits_i, 1 << bits_q))


def constellation_by_name(name: str) -> Constellation:
    key = name.strip().lower().replace("-", "")
    if key not in CONSTELLATION_NAMES:
        raise ConfigurationError(
            f"Unknown constellation '{name}'. Choose one of: {', '.join(CONSTELLATION_NAMES)}"
        )
    return build_qam(CONSTELLATION_NAMES[key])


# ================================
# BIT <-> SYMBOL
# ================================

def bits_to_indices(bits: np.ndarray, c: Constellation) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.int64)
    if bits.shape[-1] % c.bits_per_symbol:
        raise FramingError(
            f"{bits.shape[-1]} bits cannot be split into {c.bits_per_symbol}-bit symbols"
        )
    groups = bits.reshape(bits.shape[:-1] + (-1, c.bits_per_symbol))
    weights = 1 << np.arange(c.bits_per_symbol - 1, -1, -1)
    return groups @ weights


def modulate(bits: np.ndarray, c: Constellation) -> np.ndarray:
    """Map every group of Q bits to the point carrying that label."""
    return c.points[bits_to_indices(bits, c)]


def nearest_indices(symbols: np.ndarray, c: Constellation) -> np.ndarray:
    symbols = np.asarray(symbols)
    return np.argmin(np.abs(symbols[..., None] - c.points) ** 2, axis=-1)


def demap_hard(symbols: np.ndarray, c: Constellation) -> np.ndarray:
    """Nearest-point decisions flattened back to a bit vector."""
    labels = c.labels[nearest_indices(symbols, c)]
    return labels.reshape(labels.shape[:-2] + (-1,))


# ================================
# DISCRETE PMFS
# ================================

def pmf_moments(probs: np.ndarray, c: Constellation) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance of pmfs over the alphabet (last axis indexes the points)."""
    probs = np.asarray(probs, dtype=float)
    mean = probs @ c.points
    variance = probs @ c.energies - np.abs(mean) ** 2
    return mean, np.maximum(variance, 0.0)


def bit_log_probs(llrs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """log P(b=0), log P(b=1) for L = ln P(0)/P(1)."""
    llrs = np.asarray(llrs, dtype=float)
    return -np.logaddexp(0.0, -llrs), -np.logaddexp(0.0, llrs)


def llrs_to_prior(llrs: np.ndarray, c: Constellation) -> np.ndarray:
    """
    Symbol pmf implied by independent bit LLRs.

    ``llrs`` has shape ``(..., Q)``; the result has shape ``(..., M)`` with
    p(u) proportional to the product of the per-bit probabilities of its label.
    """
    llrs = np.asarray(llrs, dtype=float)
    if llrs.shape[-1] != c.bits_per_symbol:
        raise FramingError(f"Expected {c.bits_per_symbol} LLRs per symbol, got {llrs.shape[-1]}")
    log_p0, log_p1 = bit_log_probs(llrs)
    ones = c.labels.astype(bool)
    log_prior = np.where(ones, log_p1[..., None, :], log_p0[..., None, :]).sum(axis=-1)
    return softmax(log_prior, axis=-1)


def prior_bit_llrs(probs: np.ndarray, c: Constellation) -> np.ndarray:
    """Per-bit LLRs obtained by marginalizing a symbol pmf."""
    probs = np.asarray(probs, dtype=float)
    with np.errstate(divide="ignore"):
        p0 = probs @ (1 - c.labels)
        p1 = probs @ c.labels
        return np.log(p0) - np.log(p1)


def symbol_log_likelihoods(mean: np.ndarray, variance: np.ndarray, c: Constellation) -> np.ndarray:
    """-|u - mean|^2 / variance for every alphabet point u."""
    mean = np.asarray(mean)
    variance = np.asarray(variance, dtype=float)
    return -np.abs(c.points - mean[..., None]) ** 2 / variance[..., None]


def bit_llrs_from_log_weights(log_weights: np.ndarray, c: Constellation) -> np.ndarray:
    """Per-bit LLRs of a (possibly unnormalized) log pmf over the alphabet."""
    zeros = (c.labels == 0).T  # (Q, M)
    stacked = log_weights[..., None, :]
    num = logsumexp(np.where(zeros, stacked, -np.inf), axis=-1)
    den = logsumexp(np.where(~zeros, stacked, -np.inf), axis=-1)
    return num - den


def extrinsic_llr(
    mean: np.ndarray,
    variance: np.ndarray,
    c: Constellation,
    clip: Optional[float] = DEFAULT_LLR_CLIP,
) -> np.ndarray:
    """
    Exact log-sum-exp demapping of Gaussian extrinsic distributions.

    Returns LLRs of shape ``mean.shape + (Q,)``, clipped to ``+-clip`` unless
    ``clip`` is None.
    """
    variance = np.asarray(variance, dtype=float)
    if np.any(~(variance > 0)):
        raise InvalidCavityError("Extrinsic variance must be strictly positive for demapping")
    llrs = bit_llrs_from_log_weights(symbol_log_likelihoods(mean, variance, c), c)
    if clip is not None:
        llrs = np.clip(llrs, -clip, clip)
    return llrs
