# ================================
# REGULAR LDPC CODES: CONSTRUCTION, ENCODING, SUM-PRODUCT DECODING
# ================================

import logging
import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.sparse import csr_matrix

from mimo_pipeline.errors import ConfigurationError, FramingError

logger = logging.getLogger(__name__)

DEFAULT_MAX_ITER = 100

# Bounds on message magnitudes inside the check-node transform
_PHI_MIN = 1e-15
_PHI_MAX = 700.0


@dataclass
class DecodeResult:
    info_bits_hat: np.ndarray
    extrinsic_llrs: np.ndarray
    posterior_llrs: np.ndarray
    codeword_hat: np.ndarray
    iterations_used: int
    parity_ok: bool


@dataclass(eq=False)
class LdpcCode:
    """
    Binary LDPC code with a precomputed systematic encoder.

    The encoder comes from the reduced row echelon form of the parity matrix:
    information bits sit at ``info_positions`` and every pivot bit is the parity
    of the information bits selected by its row of ``encoder_map``.
    """
    parity_matrix: csr_matrix
    pivot_columns: np.ndarray
    info_positions: np.ndarray
    encoder_map: np.ndarray
    degree_repairs: int = 0
    seed: Optional[int] = None
    edge_var: np.ndarray = field(init=False, repr=False)
    edge_check: np.ndarray = field(init=False, repr=False)
    check_starts: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        H = self.parity_matrix
        H.sort_indices()
        row_degrees = np.diff(H.indptr)
        active = np.flatnonzero(row_degrees > 0)
        self.edge_var = H.indices.astype(np.int64)
        self.edge_check = np.repeat(np.arange(active.size), row_degrees[active])
        self.check_starts = H.indptr[:-1][active].astype(np.int64)
        self._encoder_float = self.encoder_map.astype(np.float32)

    @classmethod
    def from_parity_matrix(cls, H, degree_repairs: int = 0, seed: Optional[int] = None) -> "LdpcCode":
        dense = np.asarray(H.toarray() if hasattr(H, "toarray") else H, dtype=np.uint8) & 1
        rref, pivots = gf2_rref(dense)
        info_positions = np.setdiff1d(np.arange(dense.shape[1]), pivots)
        return cls(
            parity_matrix=csr_matrix(dense),
            pivot_columns=pivots,
            info_positions=info_positions,
            encoder_map=rref[:, info_positions],
            degree_repairs=degree_repairs,
            seed=seed,
        )

    @property
    def n(self) -> int:
        return self.parity_matrix.shape[1]

    @property
    def m(self) -> int:
        return self.parity_matrix.shape[0]

    @property
    def rank(self) -> int:
        return int(self.pivot_columns.size)

    @property
    def k(self) -> int:
        return self.n - self.rank

    @property
    def rate(self) -> float:
        return self.k / self.n

    def column_degrees(self) -> np.ndarray:
        return np.bincount(self.parity_matrix.indices, minlength=self.n)

    def row_degrees(self) -> np.ndarray:
        return np.diff(self.parity_matrix.indptr)

    def syndrome_ok(self, bits: np.ndarray) -> bool:
        if self.edge_var.size == 0:
            return True
        ones = np.asarray(bits, dtype=np.int64)[self.edge_var]
        return not np.any(np.add.reduceat(ones, self.check_starts) & 1)


# ================================
# GF(2) ELIMINATION
# ================================

def gf2_rref(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Reduced row echelon form over GF(2).

    Rows are bit-packed so each elimination step is a byte-wise XOR.
    Returns the non-zero rows of the RREF and the pivot columns.
    """
    rows, cols = matrix.shape
    packed = np.packbits(np.asarray(matrix, dtype=np.uint8) & 1, axis=1)
    pivots: List[int] = []
    r = 0
    for col in range(cols):
        if r == rows:
            break
        byte, bit = divmod(col, 8)
        mask = np.uint8(0x80 >> bit)
        hits = np.flatnonzero(packed[r:, byte] & mask)
        if hits.size == 0:
            continue
        pivot = r + hits[0]
        if pivot != r:
            packed[[r, pivot]] = packed[[pivot, r]]
        others = np.flatnonzero(packed[:, byte] & mask)
        others = others[others != r]
        packed[others] ^= packed[r]
        pivots.append(col)
        r += 1
    rref = np.unpackbits(packed[:r], axis=1, count=cols)
    return rref, np.asarray(pivots, dtype=np.int64)


# ================================
# CONSTRUCTION
# ================================

class _EdgeGrowth:
    """Progressive edge-growth placement with a bounded neighbourhood search."""

    def __init__(self, n: int, m: int, dv: int, dc: int, rng: np.random.Generator, max_depth: int):
        self.n, self.m, self.dv, self.dc = n, m, dv, dc
        self.rng = rng
        self.max_depth = max_depth
        self.var_checks: List[List[int]] = [[] for _ in range(n)]
        self.check_vars: List[List[int]] = [[] for _ in range(m)]
        self.check_deg = np.zeros(m, dtype=np.int64)
        self.repairs = 0

    def _pick(self, mask: np.ndarray) -> int:
        idx = np.flatnonzero(mask)
        degrees = self.check_deg[idx]
        best = idx[degrees == degrees.min()]
        return int(self.rng.choice(best))

    def _connect(self, var: int, check: int):
        self.var_checks[var].append(check)
        self.check_vars[check].append(var)
        self.check_deg[check] += 1

    def _reached_checks(self, var: int, open_checks: np.ndarray) -> np.ndarray:
        """Checks within the search depth of ``var``; stops before swallowing every open check."""
        reached = np.zeros(self.m, dtype=bool)
        reached[self.var_checks[var]] = True
        frontier = list(self.var_checks[var])
        seen_vars = {var}
        for depth in range(self.max_depth):
            next_vars = {v for c in frontier for v in self.check_vars[c] if v not in seen_vars}
            seen_vars |= next_vars
            new_checks = {c for v in next_vars for c in self.var_checks[v] if not reached[c]}
            if not new_checks:
                break
            expanded = reached.copy()
            expanded[list(new_checks)] = True
            # depth 0 is the 4-cycle guard and is always applied
            if depth > 0 and not np.any(open_checks & ~expanded):
                break
            reached = expanded
            frontier = list(new_checks)
        return reached

    def place(self, var: int):
        for _ in range(self.dv):
            open_checks = self.check_deg < self.dc
            adjacent = np.zeros(self.m, dtype=bool)
            adjacent[self.var_checks[var]] = True
            if not self.var_checks[var]:
                self._connect(var, self._pick(open_checks))
                continue
            reached = self._reached_checks(var, open_checks)
            candidates = open_checks & ~reached
            if not candidates.any():
                # degree repair: overfill a row rather than close a 4-cycle
                self.repairs += 1
                candidates = ~reached
                if not candidates.any():
                    candidates = open_checks & ~adjacent
                if not candidates.any():
                    candidates = ~adjacent
            self._connect(var, self._pick(candidates))

    def matrix(self) -> np.ndarray:
        H = np.zeros((self.m, self.n), dtype=np.uint8)
        for var, checks in enumerate(self.var_checks):
            H[checks, var] = 1
        return H


def build_code(
    n: int,
    rate: float = 0.5,
    dv: int = 3,
    dc: int = 6,
    seed: int = 0,
    max_depth: int = 3,
    rank_attempts: int = 4,
) -> LdpcCode:
    """
    Build a (dv, dc)-regular LDPC code of length ``n`` by progressive edge growth.

    Every new edge avoids checks reachable within ``max_depth`` hops of the
    variable, so no 4-cycles are closed unless a degree repair is unavoidable.
    Rank-deficient draws are rebuilt from the next seed up to ``rank_attempts``
    times.
    """
    m_float = n * (1.0 - rate)
    m = int(round(m_float))
    if n <= 0 or n % 2:
        raise ConfigurationError(f"Code length must be a positive even number, got n={n}")
    if abs(m - m_float) > 1e-9 or n * dv != m * dc:
        raise ConfigurationError(
            f"Infeasible degree profile: n={n}, rate={rate} gives {m_float:g} checks, "
            f"but n*dv={n * dv} edges need m*dc={m_float * dc:g}"
        )
    if dv > m or dc > n:
        raise ConfigurationError(f"Degrees dv={dv}, dc={dc} do not fit a {m}x{n} parity matrix")

    start_time = time.time()
    logger.info(f"🔄 Building ({dv},{dc})-regular LDPC code n={n}, seed={seed}")

    code = None
    for attempt in range(rank_attempts):
        attempt_seed = seed + attempt
        growth = _EdgeGrowth(n, m, dv, dc, np.random.default_rng(attempt_seed), max_depth)
        for var in range(n):
            growth.place(var)
        code = LdpcCode.from_parity_matrix(growth.matrix(), degree_repairs=growth.repairs, seed=attempt_seed)
        if code.rank == m:
            break
        logger.warning(f"⚠️ Parity matrix rank {code.rank} < {m} for seed {attempt_seed}, rebuilding")
    else:
        logger.warning(f"⚠️ Keeping rank-deficient parity matrix: k={code.k} instead of {n - m}")

    if code.degree_repairs:
        share = code.degree_repairs / (n * dv)
        log = logger.warning if share > 0.01 else logger.info
        log(f"⚠️ {code.degree_repairs} degree repairs ({share:.2%} of edges)")
    logger.info(f"✅ LDPC code ready in {time.time() - start_time:.2f}s (k={code.k}, rank={code.rank})")
    return code


def four_cycle_count(code: LdpcCode) -> int:
    """Number of check pairs sharing two or more variables."""
    H = code.parity_matrix.astype(np.int64)
    overlap = (H @ H.T).tocoo()
    off_diagonal = overlap.row < overlap.col
    return int(np.sum(overlap.data[off_diagonal] >= 2))


# ================================
# ENCODING
# ================================

def encode(code: LdpcCode, info_bits: np.ndarray) -> np.ndarray:
    """Systematic encoding of ``(..., k)`` information bits into ``(..., n)`` codewords."""
    info = np.asarray(info_bits, dtype=np.uint8)
    if info.shape[-1] != code.k:
        raise FramingError(f"Expected {code.k} information bits, got {info.shape[-1]}")
    codeword = np.zeros(info.shape[:-1] + (code.n,), dtype=np.uint8)
    codeword[..., code.info_positions] = info
    parity = (info.astype(np.float32) @ code._encoder_float.T).astype(np.int64) & 1
    codeword[..., code.pivot_columns] = parity
    return codeword


# ================================
# SUM-PRODUCT DECODING
# ================================

def _phi(x: np.ndarray) -> np.ndarray:
    """-log(tanh(x/2)); the check-node tanh rule in the log domain. Self-inverse."""
    x = np.clip(x, _PHI_MIN, _PHI_MAX)
    return np.log1p(np.exp(-x)) - np.log(-np.expm1(-x))


def _check_update(v2c: np.ndarray, code: LdpcCode) -> np.ndarray:
    magnitude = _phi(np.abs(v2c))
    negative = (v2c < 0).astype(np.int64)
    row_phi = np.add.reduceat(magnitude, code.check_starts)
    row_neg = np.add.reduceat(negative, code.check_starts)
    others_phi = row_phi[code.edge_check] - magnitude
    others_neg = (row_neg[code.edge_check] - negative) & 1
    return (1 - 2 * others_neg) * _phi(np.maximum(others_phi, 0.0))


def decode(code: LdpcCode, channel_llrs: np.ndarray, max_iter: int = DEFAULT_MAX_ITER) -> DecodeResult:
    """
    Flooding sum-product decoding with early exit once every parity check holds.

    LLRs follow L = ln P(b=0)/P(b=1). The extrinsic output is the posterior
    LLR minus the channel LLR.
    """
    llr = np.asarray(channel_llrs, dtype=float)
    if llr.shape != (code.n,):
        raise FramingError(f"Expected {code.n} channel LLRs, got shape {llr.shape}")

    extrinsic = np.zeros(code.n)
    posterior = llr + extrinsic
    v2c = llr[code.edge_var]
    iterations = 0
    parity_ok = code.syndrome_ok(posterior < 0) if max_iter == 0 else False

    for iteration in range(1, max_iter + 1):
        c2v = _check_update(v2c, code)
        extrinsic = np.bincount(code.edge_var, weights=c2v, minlength=code.n)
        posterior = llr + extrinsic
        v2c = posterior[code.edge_var] - c2v
        iterations = iteration
        if code.syndrome_ok(posterior < 0):
            parity_ok = True
            break

    hard = (posterior < 0).astype(np.uint8)
    return DecodeResult(
        info_bits_hat=hard[code.info_positions],
        extrinsic_llrs=extrinsic,
        posterior_llrs=posterior,
        codeword_hat=hard,
        iterations_used=iterations,
        parity_ok=parity_ok,
    )
