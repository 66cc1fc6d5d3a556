# ================================
# MONTE-CARLO BER HARNESS
# ================================
#
# Random draws depend on (seed, channel, codeword) only, never on the detector
# variant or the SNR point, so every comparison is paired.

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, model_validator

from mimo_pipeline.channel import (
    ChannelRealization,
    complex_normal,
    detector_noise_var,
    perturb_csi,
    sample_channel,
    snr_to_noise_var,
    transmit,
)
from mimo_pipeline.config import ExperimentConfig, SimulationSettings, get_settings
from mimo_pipeline.constellation import Constellation, constellation_by_name
from mimo_pipeline.epcore import get_detector_params
from mimo_pipeline.errors import ConfigurationError
from mimo_pipeline.ldpc import LdpcCode, build_code, encode
from mimo_pipeline.turbo import TurboConfig, frame_symbols, turbo_receive
from utils.file_handler import (
    BER_COLUMNS,
    ITERATION_COLUMNS,
    append_rows_csv,
    read_alist,
    read_plot_columns,
    write_plot_columns,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# spawn-key namespaces of the independent random streams
_STREAM_CHANNEL = 0
_STREAM_CSI = 1
_STREAM_FRAME = 2


class BerRecord(BaseModel):
    variant: str
    snr_db: float
    bit_errors: int
    bits_total: int
    frame_errors: int
    frames_total: int
    wall_time_s: float = 0.0

    @model_validator(mode="after")
    def _check_counts(self) -> "BerRecord":
        if not (0 <= self.bit_errors <= self.bits_total and 0 <= self.frame_errors <= self.frames_total):
            raise ValueError(
                f"Error counts exceed totals: {self.bit_errors}/{self.bits_total} bits, "
                f"{self.frame_errors}/{self.frames_total} frames"
            )
        return self

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits_total if self.bits_total else 0.0

    @property
    def fer(self) -> float:
        return self.frame_errors / self.frames_total if self.frames_total else 0.0


class IterationRecord(BaseModel):
    variant: str
    snr_db: float
    turbo_iter: int
    bit_errors: int
    bits_total: int


# ================================
# RANDOM STREAMS
# ================================

def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def draw_channel(cfg: ExperimentConfig, channel: int) -> Tuple[np.ndarray, np.ndarray]:
    """True channel and the estimate handed to the detector for channel index ``channel``."""
    H = sample_channel(cfg.system.nt, cfg.system.nr, _rng(cfg.seed, _STREAM_CHANNEL, channel))
    H_hat = perturb_csi(H, cfg.csi.sigma2, _rng(cfg.seed, _STREAM_CSI, channel))
    return H, H_hat


@dataclass
class Frame:
    info_bits: np.ndarray
    symbols: np.ndarray      # (Nt, P)
    unit_noise: np.ndarray   # (Nr, P), CN(0, 1)


def draw_frame(cfg: ExperimentConfig, code: LdpcCode, c: Constellation, channel: int, codeword: int) -> Frame:
    rng = _rng(cfg.seed, _STREAM_FRAME, channel, codeword)
    info_bits = rng.integers(0, 2, code.k, dtype=np.uint8)
    symbols = frame_symbols(encode(code, info_bits), cfg.system.nt, c)
    unit_noise = complex_normal((cfg.system.nr, symbols.shape[1]), rng)
    return Frame(info_bits=info_bits, symbols=symbols, unit_noise=unit_noise)


# ================================
# EXPERIMENT
# ================================

def build_experiment_code(cfg: ExperimentConfig) -> LdpcCode:
    if cfg.code.alist is not None:
        code = LdpcCode.from_parity_matrix(read_alist(cfg.code.alist), seed=None)
        if code.n != cfg.code.n:
            raise ConfigurationError(f"alist code has n={code.n}, config says n={cfg.code.n}")
        return code
    return build_code(
        cfg.code.n,
        rate=cfg.code.rate,
        dv=cfg.code.dv,
        dc=cfg.code.dc,
        seed=cfg.code.seed,
        max_depth=cfg.code.max_depth,
    )


def turbo_configs(cfg: ExperimentConfig) -> Dict[str, TurboConfig]:
    return {
        name: TurboConfig(
            turbo_iters=cfg.turbo.turbo_iters,
            llr_clip=cfg.turbo.llr_clip,
            early_exit=cfg.turbo.early_exit,
            decoder_max_iter=cfg.code.max_iter,
            detector=get_detector_params(name, cfg.detector_overrides.get(name)),
        )
        for name in cfg.detectors
    }


@dataclass
class _UnitOutcome:
    bit_errors: Dict[str, int]
    frame_errors: Dict[str, int]
    iteration_errors: Dict[str, List[int]]
    wall_time: Dict[str, float]


@dataclass
class _Context:
    cfg: ExperimentConfig
    constellation: Constellation
    code: LdpcCode
    turbo: Dict[str, TurboConfig]
    channels: List[Tuple[np.ndarray, np.ndarray]]


def _simulate_unit(ctx: _Context, snr_db: float, channel: int, codeword: int) -> _UnitOutcome:
    cfg = ctx.cfg
    H, H_hat = ctx.channels[channel]
    link = ChannelRealization(H=H, noise_var=snr_to_noise_var(snr_db, cfg.system.nt), H_hat=H_hat)
    frame = draw_frame(cfg, ctx.code, ctx.constellation, channel, codeword)
    y_blocks = transmit(link.H, frame.symbols, link.noise_var, unit_noise=frame.unit_noise)
    working_noise = detector_noise_var(link.noise_var, cfg.system.nt, cfg.csi)

    outcome = _UnitOutcome({}, {}, {}, {})
    for name, turbo_cfg in ctx.turbo.items():
        start_time = time.perf_counter()
        result = turbo_receive(
            y_blocks, link.H_hat, working_noise, ctx.code, turbo_cfg, ctx.constellation, info_bits=frame.info_bits
        )
        outcome.wall_time[name] = time.perf_counter() - start_time
        errors = result.bit_errors_per_iteration
        # decisions are frozen after an early exit
        errors = errors + [errors[-1]] * (turbo_cfg.turbo_iters + 1 - len(errors))
        outcome.bit_errors[name] = errors[-1]
        outcome.frame_errors[name] = int(errors[-1] > 0)
        outcome.iteration_errors[name] = errors
    return outcome


def run_experiment(
    cfg: ExperimentConfig,
    csv_path: Optional[PathLike] = None,
    settings: Optional[SimulationSettings] = None,
    workers: Optional[int] = None,
    on_point: Optional[Callable[[float, List[BerRecord]], None]] = None,
) -> List[BerRecord]:
    """
    Sweep the SNR grid: C channels x W codewords per point, every detector
    variant on the same draws. Rows are appended to the CSV as each SNR point
    completes.
    """
    settings = settings or get_settings()
    workers = workers or settings.workers
    out_dir = cfg.results_dir(settings)
    csv_path = Path(csv_path) if csv_path is not None else out_dir / f"{cfg.output.name}.csv"
    iterations_path = csv_path.with_name(f"{csv_path.stem}_iterations.csv")
    for path in (csv_path, iterations_path):
        if path.exists():
            logger.warning(f"⚠️ Overwriting existing results file {path}")
            path.unlink()

    start_time = time.time()
    c = constellation_by_name(cfg.system.constellation)
    code = build_experiment_code(cfg)
    ctx = _Context(
        cfg=cfg,
        constellation=c,
        code=code,
        turbo=turbo_configs(cfg),
        channels=[draw_channel(cfg, ch) for ch in range(cfg.counts.channels)],
    )
    units = [(ch, w) for ch in range(cfg.counts.channels) for w in range(cfg.counts.codewords)]
    frames_total = len(units)
    logger.info(
        f"🔄 {cfg.system.nt}x{cfg.system.nr} {c.name}, n={code.n}, {len(cfg.snr_db)} SNR points, "
        f"{frames_total} codewords per point, variants: {', '.join(cfg.detectors)}"
    )

    records: List[BerRecord] = []
    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        for snr_db in cfg.snr_db:
            outcomes = list(executor.map(lambda unit: _simulate_unit(ctx, snr_db, *unit), units))

            point_records, iteration_rows = [], []
            for name in cfg.detectors:
                wall = float(sum(o.wall_time[name] for o in outcomes)) if cfg.output.timing else 0.0
                point_records.append(
                    BerRecord(
                        variant=name,
                        snr_db=snr_db,
                        bit_errors=sum(o.bit_errors[name] for o in outcomes),
                        bits_total=frames_total * code.k,
                        frame_errors=sum(o.frame_errors[name] for o in outcomes),
                        frames_total=frames_total,
                        wall_time_s=wall,
                    )
                )
                if cfg.output.iterations:
                    per_iter = np.sum([o.iteration_errors[name] for o in outcomes], axis=0)
                    iteration_rows += [
                        IterationRecord(
                            variant=name, snr_db=snr_db, turbo_iter=t,
                            bit_errors=int(e), bits_total=frames_total * code.k,
                        ).model_dump()
                        for t, e in enumerate(per_iter)
                    ]

            append_rows_csv(csv_path, [r.model_dump() for r in point_records], BER_COLUMNS)
            append_rows_csv(iterations_path, iteration_rows, ITERATION_COLUMNS)
            records += point_records
            summary = ", ".join(f"{r.variant}={r.ber:.2e}" for r in point_records)
            logger.info(f"📊 SNR {snr_db:g} dB: {summary}")
            if on_point is not None:
                on_point(snr_db, point_records)

    if cfg.output.plot_data:
        emit_plot_data(records, csv_path.parent / f"{csv_path.stem}_plot")
    logger.info(f"✅ Experiment finished in {time.time() - start_time:.1f}s, results in {csv_path}")
    return records


# ================================
# PLOT DATA AND POST-PROCESSING
# ================================

def records_frame(records: Sequence[BerRecord]) -> pd.DataFrame:
    frame = pd.DataFrame([r.model_dump() for r in records], columns=BER_COLUMNS)
    frame["ber"] = frame["bit_errors"] / frame["bits_total"]
    return frame


def emit_plot_data(records: Sequence[BerRecord], out_dir: PathLike) -> List[Path]:
    """One ``{variant}.dat`` per variant with columns snr_db, ber sorted by SNR."""
    if not records:
        raise ConfigurationError("No BER records to emit")
    frame = records_frame(records)
    paths = []
    for variant, group in frame.groupby("variant", sort=True):
        paths.append(write_plot_columns(Path(out_dir) / f"{variant}.dat", group.sort_values("snr_db"), ["snr_db", "ber"]))
    return paths


def read_plot_data(path: PathLike) -> pd.DataFrame:
    return read_plot_columns(path, ["snr_db", "ber"])


def load_records(path: PathLike) -> List[BerRecord]:
    frame = pd.read_csv(path, float_precision="round_trip")
    return [BerRecord(**row) for row in frame.to_dict(orient="records")]


def snr_at_ber(records: Sequence[BerRecord], variant: str, target: float) -> Optional[float]:
    """
    SNR at which ``variant`` first reaches ``target`` BER, interpolating
    log10(BER) linearly between grid points. Zero-error points count as half an
    error. None if the target is never reached.
    """
    points = sorted((r for r in records if r.variant == variant), key=lambda r: r.snr_db)
    if not points:
        raise ConfigurationError(f"No records for variant '{variant}'")

    def log_ber(r: BerRecord) -> float:
        return float(np.log10(max(r.bit_errors, 0.5) / r.bits_total))

    goal = np.log10(target)
    previous = None
    for r in points:
        current = log_ber(r)
        if current <= goal:
            if previous is None:
                return r.snr_db
            (x0, y0), (x1, y1) = previous, (r.snr_db, current)
            return x0 + (goal - y0) * (x1 - x0) / (y1 - y0)
        previous = (r.snr_db, current)
    return None


def compare_csi_compensation(cfg: ExperimentConfig, settings: Optional[SimulationSettings] = None) -> Dict[str, List[BerRecord]]:
    """
    Paired imperfect-CSI runs with and without noise-variance compensation.
    Both runs see the same channels, estimation errors, bits and noise.
    """
    if cfg.csi.sigma2 <= 0:
        raise ConfigurationError("CSI comparison needs csi.sigma2 > 0")
    results = {}
    for label, compensate in (("uncompensated", False), ("compensated", True)):
        variant_cfg = cfg.model_copy(deep=True)
        variant_cfg.csi.compensate = compensate
        variant_cfg.output.name = f"{cfg.output.name}_{label}"
        results[label] = run_experiment(variant_cfg, settings=settings)
    return results
