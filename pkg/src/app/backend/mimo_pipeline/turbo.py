# ================================
# TURBO RECEIVER: DETECTOR <-> DECODER EXCHANGE
# ================================

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from mimo_pipeline.constellation import (
    DEFAULT_LLR_CLIP,
    Constellation,
    extrinsic_llr,
    llrs_to_prior,
    modulate,
)
from mimo_pipeline.epcore import DetectorParams, detect, get_detector_params
from mimo_pipeline.errors import FramingError
from mimo_pipeline.ldpc import DEFAULT_MAX_ITER, DecodeResult, LdpcCode, decode

logger = logging.getLogger(__name__)

DecodeFn = Callable[[LdpcCode, np.ndarray, int], DecodeResult]


class TurboConfig(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    turbo_iters: int = Field(default=5, ge=0)
    llr_clip: float = Field(default=DEFAULT_LLR_CLIP, gt=0.0)
    early_exit: bool = True
    decoder_max_iter: int = Field(default=DEFAULT_MAX_ITER, ge=0)
    detector: DetectorParams = Field(default_factory=lambda: get_detector_params("nubep"))


@dataclass
class TurboResult:
    info_bits_hat: np.ndarray
    bit_errors_per_iteration: List[int] = field(default_factory=list)
    iterations_run: int = 0
    early_exit: bool = False
    parity_ok: bool = False


# ================================
# BIT <-> (BLOCK, ANTENNA, LABEL BIT) BOOKKEEPING
# ================================
# Codeword bit n (1-based) sits in channel use p, antenna k, label bit q with
# n = (p-1)*Nt*Q + (k-1)*Q + q.

def bit_index(p: int, k: int, q: int, nt: int, bits_per_symbol: int) -> int:
    return (p - 1) * nt * bits_per_symbol + (k - 1) * bits_per_symbol + q


def symbol_coordinates(n: int, nt: int, bits_per_symbol: int) -> tuple[int, int, int]:
    """Inverse of ``bit_index``: 1-based (p, k, q) for codeword bit ``n``."""
    p, rest = divmod(n - 1, nt * bits_per_symbol)
    k, q = divmod(rest, bits_per_symbol)
    return p + 1, k + 1, q + 1


def codeword_to_blocks(values: np.ndarray, nt: int, bits_per_symbol: int) -> np.ndarray:
    """Per-bit values of a codeword arranged as (P, Nt, Q)."""
    values = np.asarray(values)
    frame = nt * bits_per_symbol
    if values.ndim != 1 or values.size % frame:
        raise FramingError(f"Codeword of length {values.size} does not split into blocks of Nt*Q={frame} bits")
    return values.reshape(-1, nt, bits_per_symbol)


def blocks_to_codeword(blocks: np.ndarray) -> np.ndarray:
    return np.asarray(blocks).reshape(-1)


def frame_symbols(codeword: np.ndarray, nt: int, c: Constellation) -> np.ndarray:
    """Transmit symbols of one codeword as (Nt, P): column p is channel use p."""
    blocks = codeword_to_blocks(codeword, nt, c.bits_per_symbol)
    return modulate(blocks.reshape(blocks.shape[0], -1), c).T


# ================================
# TURBO LOOP
# ================================

def detector_llrs(cavities, c: Constellation, clip: Optional[float]) -> np.ndarray:
    """Clipped extrinsic bit LLRs (P, Nt, Q); zero where no valid cavity exists."""
    valid = cavities.valid
    means = np.where(valid, cavities.means, 0.0)
    variances = np.where(valid, cavities.variances, 1.0)
    llrs = extrinsic_llr(means, variances, c, clip=clip)
    return np.where(valid[..., None], llrs, 0.0)


def turbo_receive(
    y_blocks: np.ndarray,
    H: np.ndarray,
    noise_var: float,
    code: LdpcCode,
    cfg: TurboConfig,
    c: Constellation,
    info_bits: Optional[np.ndarray] = None,
    decode_fn: DecodeFn = decode,
) -> TurboResult:
    """
    Iterative detection and decoding of one codeword sent over P channel uses.

    ``y_blocks`` is (Nr, P) and ``H`` is the channel matrix the detector
    believes in. Turbo iterations t = 0..T are run: t = 0 starts from uniform
    priors and every later iteration feeds the decoder extrinsic LLRs back as
    symbol priors. When ``info_bits`` is given the information-bit errors after
    each decode are recorded.
    """
    y_blocks = np.asarray(y_blocks)
    nt = H.shape[1]
    q = c.bits_per_symbol
    if y_blocks.ndim != 2 or y_blocks.shape[0] != H.shape[0]:
        raise FramingError(f"Expected received blocks of shape (Nr={H.shape[0]}, P), got {y_blocks.shape}")
    num_blocks = y_blocks.shape[1]
    if num_blocks * nt * q != code.n:
        raise FramingError(
            f"{num_blocks} channel uses carry {num_blocks * nt * q} bits, codeword has n={code.n}"
        )

    priors = c.uniform_prior(num_blocks, nt)
    result = TurboResult(info_bits_hat=np.zeros(code.k, dtype=np.uint8))

    for t in range(cfg.turbo_iters + 1):
        cavities = detect(cfg.detector, y_blocks, H, noise_var, priors, t, c)
        channel_llrs = blocks_to_codeword(detector_llrs(cavities, c, cfg.llr_clip))
        decoded = decode_fn(code, channel_llrs, cfg.decoder_max_iter)

        result.info_bits_hat = decoded.info_bits_hat
        result.iterations_run = t + 1
        result.parity_ok = decoded.parity_ok
        if info_bits is not None:
            result.bit_errors_per_iteration.append(int(np.count_nonzero(decoded.info_bits_hat != info_bits)))

        if decoded.parity_ok and cfg.early_exit:
            result.early_exit = t < cfg.turbo_iters
            logger.debug(f"Parity satisfied after turbo iteration {t}")
            break
        priors = llrs_to_prior(codeword_to_blocks(decoded.extrinsic_llrs, nt, q), c)

    return result
