# ================================
# MIMO CHANNEL, AWGN AND IMPERFECT CSI
# ================================
#
# Complex Gaussian "variance" is E[|z|^2] throughout (real and imaginary parts
# each carry half of it). Symbol energy Es is 1 by constellation normalization.

from dataclasses import dataclass
from typing import Optional

import numpy as np
from pydantic import BaseModel, Field

from mimo_pipeline.errors import ConfigurationError, FramingError

SYMBOL_ENERGY = 1.0


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """
    Channel matrix used on the air, the noise variance per receive entry and
    the estimate handed to the detector (``H`` itself under perfect CSI).
    """
    H: np.ndarray
    noise_var: float
    H_hat: Optional[np.ndarray] = None

    def __post_init__(self):
        nr, nt = self.H.shape
        if nr < nt:
            raise ConfigurationError(f"Need Nr >= Nt, got Nr={nr}, Nt={nt}")
        if not self.noise_var > 0:
            raise ConfigurationError(f"Noise variance must be positive, got {self.noise_var}")
        if self.H_hat is None:
            object.__setattr__(self, "H_hat", self.H)
        elif self.H_hat.shape != self.H.shape:
            raise FramingError(f"Channel estimate of shape {self.H_hat.shape} does not match H {self.H.shape}")


class CsiModel(BaseModel):
    """Additive Gaussian channel-estimation error seen by the detector."""
    sigma2: float = Field(default=0.0, ge=0.0)
    compensate: bool = False


def complex_normal(shape, rng: np.random.Generator, variance: float = 1.0) -> np.ndarray:
    """Circularly-symmetric complex Gaussian samples with E[|z|^2] = variance."""
    scale = np.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def sample_channel(nt: int, nr: int, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. CN(0, 1) Nr x Nt channel matrix."""
    if nt < 1 or nr < nt:
        raise ConfigurationError(f"Need Nr >= Nt >= 1, got Nt={nt}, Nr={nr}")
    return complex_normal((nr, nt), rng)


def snr_to_noise_var(snr_db: float, nt: int, es: float = SYMBOL_ENERGY) -> float:
    """Noise variance for an operating point given as Nt*Es/N0 in dB."""
    return nt * es / 10.0 ** (snr_db / 10.0)


def transmit(
    H: np.ndarray,
    u: np.ndarray,
    noise_var: float,
    rng: np.random.Generator = None,
    unit_noise: np.ndarray = None,
) -> np.ndarray:
    """
    y = H u + w for one channel use (``u`` of shape (Nt,)) or a frame of
    channel uses (``u`` of shape (Nt, P)).

    ``unit_noise`` lets the caller supply pre-drawn CN(0, 1) samples so the same
    noise realization can be replayed at several SNR points.
    """
    H = np.asarray(H)
    u = np.asarray(u)
    if u.shape[0] != H.shape[1]:
        raise FramingError(f"Symbol vector has {u.shape[0]} entries, channel expects Nt={H.shape[1]}")
    clean = H @ u
    if unit_noise is None:
        if rng is None:
            raise ValueError("transmit needs either rng or unit_noise")
        unit_noise = complex_normal(clean.shape, rng)
    elif unit_noise.shape != clean.shape:
        raise FramingError(f"Noise shape {unit_noise.shape} does not match received shape {clean.shape}")
    return clean + np.sqrt(noise_var) * unit_noise


def perturb_csi(H: np.ndarray, sigma2: float, rng: np.random.Generator) -> np.ndarray:
    """Channel estimate H + Delta with Delta ~ CN(0, sigma2) entry-wise."""
    if sigma2 < 0:
        raise ConfigurationError(f"CSI error variance must be >= 0, got {sigma2}")
    if sigma2 == 0:
        return np.array(H, copy=True)
    return H + complex_normal(H.shape, rng, sigma2)


def detector_noise_var(noise_var: float, nt: int, csi: CsiModel, es: float = SYMBOL_ENERGY) -> float:
    """Noise variance handed to the detector, inflated by Nt*sigma_H^2*Es when compensating."""
    if csi.compensate:
        return nt * csi.sigma2 * es + noise_var
    return noise_var
