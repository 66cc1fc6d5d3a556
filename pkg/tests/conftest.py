import numpy as np
import pytest

from mimo_pipeline.config import ExperimentConfig
from mimo_pipeline.constellation import build_qam
from mimo_pipeline.ldpc import build_code


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def qam16():
    return build_qam(16)


@pytest.fixture(scope="session")
def qpsk():
    return build_qam(4)


@pytest.fixture(scope="session")
def bpsk():
    return build_qam(2)


@pytest.fixture(scope="session")
def small_code():
    # 2x2 QPSK frames carry 4 bits, 96 = 24 channel uses
    return build_code(96, seed=3)


@pytest.fixture
def tiny_config(tmp_path):
    def make(**sections):
        data = {
            "system": {"constellation": "qpsk", "nt": 2, "nr": 2},
            "code": {"n": 96, "seed": 3, "max_iter": 30},
            "turbo": {"turbo_iters": 2},
            "counts": {"channels": 2, "codewords": 2},
            "snr_db": [4.0, 8.0],
            "detectors": ["nubep", "lmmse"],
            "seed": 7,
            "output": {"dir": str(tmp_path / "results"), "name": "tiny", "timing": False},
        }
        for key, value in sections.items():
            if isinstance(value, dict) and isinstance(data.get(key), dict):
                data[key] = {**data[key], **value}
            else:
                data[key] = value
        return ExperimentConfig.model_validate(data)

    return make
