import json

import numpy as np
import pytest

from mimo_pipeline import verification
from mimo_pipeline.channel import snr_to_noise_var
from mimo_pipeline.constellation import build_qam
from mimo_pipeline.oracle import map_marginals
from mimo_pipeline.verification import (
    CheckResult,
    _check,
    check_identities,
    check_lmmse_degeneracy,
    check_schedules,
    check_single_antenna_oracle,
    complexity_profile,
    oracle_reference_instance,
    run_verification,
    symbol_error_rates,
    write_oracle_golden,
)


def test_identities_hold():
    passed, detail = check_identities(instances=200)
    assert passed, detail


def test_lmmse_equals_zero_pass_detector():
    passed, detail = check_lmmse_degeneracy(instances=20)
    assert passed, detail


def test_schedules():
    passed, detail = check_schedules()
    assert passed, detail
    assert "beta(0..5)=[0.1, " in detail


def test_failing_check_is_reported_not_raised():
    def broken():
        raise RuntimeError("boom")

    result = _check("broken", broken)
    assert isinstance(result, CheckResult)
    assert not result.passed
    assert "RuntimeError" in result.detail


def test_golden_file_matches_fresh_oracle(tmp_path):
    path = write_oracle_golden(tmp_path / "golden" / "oracle.json")
    stored = json.loads(path.read_text(encoding="utf-8"))
    assert stored == oracle_reference_instance()

    c = build_qam(4)
    H = np.array(stored["H_real"]) + 1j * np.array(stored["H_imag"])
    y = np.array(stored["y_real"]) + 1j * np.array(stored["y_imag"])
    fresh = map_marginals(y, H, stored["noise_var"], c.uniform_prior(2), c)
    assert np.allclose(fresh.symbol_pmfs, stored["symbol_pmfs"], atol=1e-12)
    assert np.allclose(fresh.bit_llrs, stored["bit_llrs"], atol=1e-9)


def test_symbol_error_rates_small_sample():
    ser = symbol_error_rates(draws=300, es_n0_db=12.0)
    assert ser["symbols"] == 600
    assert set(ser) == {"map", "nubep", "lmmse", "symbols"}
    assert all(0.0 <= ser[k] <= 1.0 for k in ("map", "nubep", "lmmse"))


def test_complexity_profile_shape():
    profile = complexity_profile(nt_values=(4, 8), repeats=2, blocks=16)
    assert profile.nt_values == [4, 8]
    assert len(profile.median_seconds) == 2 and min(profile.median_seconds) > 0
    assert np.isfinite(profile.slope)


def test_fast_suite(tmp_path):
    golden = tmp_path / "oracle.json"
    results = run_verification(golden_out=golden)
    assert [r.name for r in results] == ["identities", "single_antenna_oracle", "lmmse_degeneracy", "schedules"]
    assert all(r.passed for r in results), [r.detail for r in results if not r.passed]
    assert golden.exists()


@pytest.mark.slow
def test_single_antenna_oracle_full():
    passed, detail = check_single_antenna_oracle()
    assert passed, detail


def test_symbol_error_rates_use_per_antenna_es_n0(monkeypatch):
    seen = []

    def recording(snr_db, nt):
        seen.append(snr_to_noise_var(snr_db, nt))
        return seen[-1]

    monkeypatch.setattr(verification, "snr_to_noise_var", recording)
    symbol_error_rates(draws=2, es_n0_db=10.0, nt=2)
    assert seen == [pytest.approx(0.1)]
