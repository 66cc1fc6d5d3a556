# Simulation Configuration Parameters

import os
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, model_validator

from mimo_pipeline.channel import CsiModel
from mimo_pipeline.constellation import CONSTELLATION_NAMES
from mimo_pipeline.errors import ConfigurationError

load_dotenv()

# ================================
# SIMULATION DEFAULTS - DESK SCALE
# ================================
sim_config = {
    "constellation": "16qam",
    "nt": 6,
    "nr": 6,
    "snr_db": [8.0, 10.0, 12.0, 14.0, 16.0],
    "channels": 10,             # C: random channels per SNR point
    "codewords": 200,           # W: codewords per channel
    "turbo_iters": 5,           # T
    "llr_clip": 5.0,            # detector -> decoder only
    "early_exit": True,
    "seed": 0,
}

# ================================
# DETECTOR PRESETS
# ================================
DETECTOR_PRESETS: Dict[str, Dict[str, Any]] = {
    "nubep": {
        "self_iterations": 3,
        "beta_schedule": "exponential",   # min(exp(t/1.5)/10, 0.7)
        "eps": 1e-8,
        "policy": "keep-old",
    },
    "epd": {
        "self_iterations": 10,
        "beta": 0.95,
        "eps_schedule": "halving",        # 2^-max(l-4, 1)
        "policy": "keep-old",
        "uniform_moment_prior": True,
    },
    "mpep": {
        "self_iterations": 1,
        "beta": 1.0,
        "eps": 0.0,
        "policy": "use-tilted",
    },
    "lmmse": {
        "self_iterations": 0,
        "beta": 1.0,
        "eps": 0.0,
    },
}

# (3,6)-regular rate-1/2 LDPC
CODE_CONFIG = {
    "n": 1008,                  # divisible by Nt*Q for 6x6 16-QAM, 6x6 128-QAM and 8x8 128-QAM
    "rate": 0.5,
    "dv": 3,
    "dc": 6,
    "seed": 0,
    "max_iter": 100,
    "max_depth": 3,
}


# ================================
# CODE LENGTH HELPER
# ================================
def suggest_code_length(nt: int, bits_per_symbol: int, target: int = 4096, dc: int = 6) -> int:
    """
    Closest length to ``target`` that fills whole channel uses and keeps the
    rate-1/2 (3,6) profile feasible.

    6x6 128-QAM gives 4116 and 32x32 128-QAM gives 4032.
    """
    step = nt * bits_per_symbol
    # m = n/2 checks of degree dc need n*dv = m*dc edges, i.e. n even
    while step % 2:
        step *= 2
    lower = max(step, (target // step) * step)
    upper = lower + step
    return lower if target - lower <= upper - target else upper


# ================================
# ENVIRONMENT SETTINGS
# ================================
class SimulationSettings(BaseModel):
    results_dir: Path = Path("results")
    workers: int = 1
    log_level: str = "INFO"
    max_oracle_size: int = 10 ** 6

    @classmethod
    def from_env(cls) -> "SimulationSettings":
        try:
            return cls(
                results_dir=Path(os.getenv("TURBOLYNX_RESULTS_DIR", "results")),
                workers=int(os.getenv("TURBOLYNX_WORKERS", "1")),
                log_level=os.getenv("TURBOLYNX_LOG_LEVEL", "INFO").upper(),
                max_oracle_size=int(float(os.getenv("TURBOLYNX_MAX_ORACLE_SIZE", str(10 ** 6)))),
            )
        except ValueError as e:
            raise ConfigurationError(f"Invalid TURBOLYNX_* environment setting: {e}") from e


def get_settings() -> SimulationSettings:
    return SimulationSettings.from_env()


# ================================
# EXPERIMENT CONFIG
# ================================
class SystemSection(BaseModel):
    constellation: str = sim_config["constellation"]
    nt: int = sim_config["nt"]
    nr: int = sim_config["nr"]


class CodeSection(BaseModel):
    n: int = CODE_CONFIG["n"]
    rate: float = CODE_CONFIG["rate"]
    dv: int = CODE_CONFIG["dv"]
    dc: int = CODE_CONFIG["dc"]
    seed: int = CODE_CONFIG["seed"]
    max_iter: int = CODE_CONFIG["max_iter"]
    max_depth: int = CODE_CONFIG["max_depth"]
    alist: Optional[Path] = None  # load the parity matrix instead of building one


class TurboSection(BaseModel):
    turbo_iters: int = sim_config["turbo_iters"]
    llr_clip: float = sim_config["llr_clip"]
    early_exit: bool = sim_config["early_exit"]


class CountsSection(BaseModel):
    channels: int = sim_config["channels"]
    codewords: int = sim_config["codewords"]


class OutputSection(BaseModel):
    dir: Optional[Path] = None          # falls back to TURBOLYNX_RESULTS_DIR
    name: str = "ber"
    timing: bool = True
    iterations: bool = False
    plot_data: bool = True


class ExperimentConfig(BaseModel):
    system: SystemSection = Field(default_factory=SystemSection)
    code: CodeSection = Field(default_factory=CodeSection)
    turbo: TurboSection = Field(default_factory=TurboSection)
    csi: CsiModel = Field(default_factory=CsiModel)
    counts: CountsSection = Field(default_factory=CountsSection)
    snr_db: List[float] = Field(default_factory=lambda: list(sim_config["snr_db"]))
    detectors: List[str] = Field(default_factory=lambda: list(DETECTOR_PRESETS))
    detector_overrides: Dict[str, Dict[str, Any]] = Field(default_factory=dict)
    seed: int = sim_config["seed"]
    output: OutputSection = Field(default_factory=OutputSection)

    @model_validator(mode="after")
    def _check_consistency(self) -> "ExperimentConfig":
        name = self.system.constellation.strip().lower().replace("-", "")
        if name not in CONSTELLATION_NAMES:
            raise ConfigurationError(
                f"Unknown constellation '{self.system.constellation}'. Choose one of: {', '.join(CONSTELLATION_NAMES)}"
            )
        self.system.constellation = name

        if self.system.nt < 1 or self.system.nr < self.system.nt:
            raise ConfigurationError(f"Need Nr >= Nt >= 1, got Nt={self.system.nt}, Nr={self.system.nr}")

        self.detectors = [d.strip().lower() for d in self.detectors]
        if not self.detectors:
            raise ConfigurationError("At least one detector variant is required")
        unknown = [d for d in self.detectors + list(self.detector_overrides) if d not in DETECTOR_PRESETS]
        if unknown:
            raise ConfigurationError(
                f"Unknown detector(s) {', '.join(unknown)}. Choose from: {', '.join(DETECTOR_PRESETS)}"
            )
        if len(set(self.detectors)) != len(self.detectors):
            raise ConfigurationError(f"Duplicate detector variants in {self.detectors}")

        if self.counts.channels < 1 or self.counts.codewords < 1:
            raise ConfigurationError(
                f"Counts must be >= 1, got channels={self.counts.channels}, codewords={self.counts.codewords}"
            )
        if not self.snr_db:
            raise ConfigurationError("SNR grid is empty")
        if any(b <= a for a, b in zip(self.snr_db, self.snr_db[1:])):
            raise ConfigurationError(f"SNR grid must be strictly increasing, got {self.snr_db}")

        if self.turbo.turbo_iters < 0:
            raise ConfigurationError(f"turbo_iters must be >= 0, got {self.turbo.turbo_iters}")
        if self.turbo.llr_clip <= 0:
            raise ConfigurationError(f"llr_clip must be positive, got {self.turbo.llr_clip}")

        bits_per_symbol = CONSTELLATION_NAMES[name].bit_length() - 1
        frame = self.system.nt * bits_per_symbol
        if self.code.n % frame:
            raise ConfigurationError(
                f"Code length n={self.code.n} is not a multiple of Nt*Q={frame}; "
                f"try n={suggest_code_length(self.system.nt, bits_per_symbol, self.code.n)}"
            )
        m_float = self.code.n * (1.0 - self.code.rate)
        if abs(m_float - round(m_float)) > 1e-9 or abs(self.code.n * self.code.dv - m_float * self.code.dc) > 1e-9:
            raise ConfigurationError(
                f"Infeasible degree profile: n={self.code.n}, rate={self.code.rate}, "
                f"dv={self.code.dv}, dc={self.code.dc}"
            )
        return self

    @property
    def blocks_per_codeword(self) -> int:
        bits_per_symbol = CONSTELLATION_NAMES[self.system.constellation].bit_length() - 1
        return self.code.n // (self.system.nt * bits_per_symbol)

    def results_dir(self, settings: Optional[SimulationSettings] = None) -> Path:
        if self.output.dir is not None:
            return self.output.dir
        return (settings or get_settings()).results_dir


def apply_overrides(data: Dict[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    """
    Set dotted keys (``system.nt``) in a nested dict. String values are parsed
    as YAML scalars so ``"8"`` becomes 8 and ``"[1, 2]"`` a list.
    """
    merged = dict(data)
    for dotted, value in overrides.items():
        if isinstance(value, str):
            value = yaml.safe_load(value)
        keys = dotted.split(".")
        node = merged
        for key in keys[:-1]:
            child = node.get(key)
            node[key] = dict(child) if isinstance(child, dict) else {}
            node = node[key]
        node[keys[-1]] = value
    return merged


def load_experiment_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> ExperimentConfig:
    data: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"Config file not found: {path}")
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
        if not isinstance(data, dict):
            raise ConfigurationError(f"Config file {path} must contain a mapping at the top level")
    data = apply_overrides(data, overrides or {})
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid experiment config: {e}") from e
