import numpy as np
import pytest

from mimo_pipeline.channel import (
    ChannelRealization,
    CsiModel,
    detector_noise_var,
    perturb_csi,
    sample_channel,
    snr_to_noise_var,
    transmit,
)
from mimo_pipeline.errors import ConfigurationError, FramingError


def test_channel_entries_are_unit_variance():
    H = sample_channel(10, 10, np.random.default_rng(0))
    assert H.shape == (10, 10)
    samples = np.concatenate([sample_channel(10, 100, np.random.default_rng(s)).ravel() for s in range(100)])
    assert 0.98 <= np.mean(np.abs(samples) ** 2) <= 1.02
    assert abs(np.mean(samples)) < 0.02


def test_received_signal_energy_scales_with_transmit_antennas(qam16):
    rng = np.random.default_rng(11)
    nt, nr = 4, 8
    energies = []
    for _ in range(400):
        H = sample_channel(nt, nr, rng)
        u = qam16.points[rng.integers(0, qam16.order, (nt, 64))]
        energies.append(np.sum(np.abs(H @ u) ** 2, axis=0) / nr)
    assert np.mean(energies) == pytest.approx(nt, rel=0.03)


def test_same_seed_same_channel():
    a = sample_channel(4, 6, np.random.default_rng(42))
    b = sample_channel(4, 6, np.random.default_rng(42))
    assert np.array_equal(a, b)


def test_more_transmit_than_receive_antennas_rejected(rng):
    with pytest.raises(ConfigurationError):
        sample_channel(4, 2, rng)
    with pytest.raises(ConfigurationError):
        ChannelRealization(H=np.ones((2, 4)), noise_var=0.1)


def test_channel_realization_defaults_to_perfect_csi(rng):
    H = sample_channel(2, 3, rng)
    link = ChannelRealization(H=H, noise_var=0.1)
    assert link.H_hat is H
    noisy = ChannelRealization(H=H, noise_var=0.1, H_hat=perturb_csi(H, 0.01, rng))
    assert not np.array_equal(noisy.H_hat, H)
    with pytest.raises(FramingError):
        ChannelRealization(H=H, noise_var=0.1, H_hat=H[:, :1])
    with pytest.raises(ConfigurationError):
        ChannelRealization(H=H, noise_var=0.0)


@pytest.mark.parametrize("snr_db, nt, expected", [(0.0, 1, 1.0), (10.0, 1, 0.1), (30.0, 6, 6e-3)])
def test_snr_to_noise_var(snr_db, nt, expected):
    assert snr_to_noise_var(snr_db, nt) == pytest.approx(expected, rel=1e-12)


def test_transmit_noiseless_identity(rng):
    u = rng.normal(size=(3, 5)) + 1j * rng.normal(size=(3, 5))
    y = transmit(np.eye(3), u, 0.0, rng)
    assert np.array_equal(y, u)


def test_transmit_noise_variance():
    rng = np.random.default_rng(5)
    H = sample_channel(2, 4, rng)
    u = np.ones((2, 25_000), dtype=complex)
    y = transmit(H, u, 0.3, rng)
    residual = y - H @ u
    assert np.mean(np.abs(residual) ** 2) == pytest.approx(0.3, rel=0.02)


def test_transmit_replays_unit_noise(rng):
    H = sample_channel(2, 2, rng)
    u = np.ones((2, 4), dtype=complex)
    noise = rng.normal(size=(2, 4)) + 0j
    y1 = transmit(H, u, 0.25, unit_noise=noise)
    y2 = transmit(H, u, 1.0, unit_noise=noise)
    assert np.allclose(y1 - H @ u, 0.5 * (y2 - H @ u))
    with pytest.raises(FramingError):
        transmit(H, np.ones(3), 0.1, rng)


def test_perturb_csi():
    rng = np.random.default_rng(9)
    H = sample_channel(100, 1000, rng)
    assert np.array_equal(perturb_csi(H, 0.0, rng), H)
    delta = perturb_csi(H, 1e-3, rng) - H
    assert np.mean(np.abs(delta) ** 2) == pytest.approx(1e-3, rel=0.05)


def test_detector_noise_var_compensation():
    assert detector_noise_var(0.01, 8, CsiModel(sigma2=1e-3, compensate=False)) == 0.01
    assert detector_noise_var(0.01, 8, CsiModel(sigma2=1e-3, compensate=True)) == pytest.approx(8 * 1e-3 + 0.01)
