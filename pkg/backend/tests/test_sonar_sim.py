import os
import sys
import numpy as np
import pytest

# Add the repository root to path to import the backend
sys.path.append(os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))))
from backend.app.errors import DimensionMismatchError
from backend.app.models import SimConfig, TargetSpec
from backend.app.sonar_sim import beam_track, simulate, simulate_with_reference, snr_db, target_beams


def test_simulate_shape_and_metadata(small_sim_config):
    signal = simulate(small_sim_config)
    assert signal.data.shape == (8, 1024)
    assert signal.sample_rate_hz == 1024.0
    assert signal.metadata["seed"] == 7
    assert signal.metadata["config"]["n_beams"] == 8


def test_simulate_is_reproducible(small_sim_config):
    a = simulate(small_sim_config)
    b = simulate(small_sim_config)
    c = simulate(small_sim_config.model_copy(update={"seed": 8}))
    np.testing.assert_array_equal(a.data, b.data)
    assert not np.array_equal(a.data, c.data)


def test_target_power_on_its_beam(small_sim_config):
    """A static target puts sum(A^2)/2 of power on its centre beam."""
    _, clean = simulate_with_reference(small_sim_config)
    assert np.mean(clean.data[3] ** 2) == pytest.approx(2 * 1.5**2 / 2, rel=1e-6)
    assert np.max(np.abs(clean.data[0])) < 1e-10


def test_noise_free_simulation(small_sim_config):
    noisy, clean = simulate_with_reference(small_sim_config.model_copy(update={"noise_sigma": 0.0}))
    np.testing.assert_array_equal(noisy.data, clean.data)
    assert np.all(np.isinf(snr_db(noisy, clean)))


def test_noise_is_per_beam(small_sim_config):
    """A beam's noise depends only on the seed and the beam index."""
    wide_noisy, wide_clean = simulate_with_reference(small_sim_config)
    narrow_noisy, narrow_clean = simulate_with_reference(small_sim_config.model_copy(update={"n_beams": 5}))
    np.testing.assert_array_equal(wide_noisy.data[2] - wide_clean.data[2], narrow_noisy.data[2] - narrow_clean.data[2])


def test_snr_db(small_sim_config):
    noisy, clean = simulate_with_reference(small_sim_config)
    snr = snr_db(noisy, clean)
    assert snr.shape == (8,)
    assert snr[3] == pytest.approx(10 * np.log10(2.25), abs=0.5)
    with pytest.raises(DimensionMismatchError):
        snr_db(noisy, simulate_with_reference(small_sim_config.model_copy(update={"n_beams": 5}))[1])


def test_moving_target_track():
    target = TargetSpec(tonal_freqs_hz=[50.0], amplitudes=[1.0], start_beam=2.0, end_beam=6.0)
    np.testing.assert_allclose(beam_track(target, np.array([0.0, 1.0, 2.0]), 2.0), [2.0, 4.0, 6.0])
    cfg = SimConfig(n_beams=10, sample_rate_hz=512.0, duration_s=1.0, targets=[target])
    assert target_beams(cfg) == [2, 3, 4, 5, 6]


def test_desk_target_beams():
    assert target_beams(SimConfig()) == [1, 2, 32, 33, 55]


def test_sim_config_validation():
    with pytest.raises(ValueError):
        SimConfig(sample_rate_hz=512.0, duration_s=1.0)
    with pytest.raises(ValueError):
        SimConfig(n_beams=4, targets=[TargetSpec(tonal_freqs_hz=[10.0], amplitudes=[1.0], start_beam=0, end_beam=7)])
    with pytest.raises(ValueError):
        SimConfig(seed=-1)
    with pytest.raises(ValueError):
        TargetSpec(tonal_freqs_hz=[10.0, 20.0], amplitudes=[1.0], start_beam=0, end_beam=0)


def test_target_free_beams_are_white_noise():
    cfg = SimConfig(n_beams=3, sample_rate_hz=4096.0, duration_s=16.0, targets=[], noise_sigma=2.0, seed=3)
    signal = simulate(cfg)
    assert signal.data.shape == (3, 65536)
    np.testing.assert_allclose(signal.data.var(axis=1), 4.0, rtol=0.05)


def test_sinusoid_snr():
    """A unit sinusoid in unit noise sits at -3 dB; ten times the noise costs 20 dB."""
    from backend.app.models import MultichannelSignal

    rng = np.random.default_rng(0)
    t = np.arange(2**16)
    clean = MultichannelSignal(data=np.sin(2 * np.pi * 0.01 * t)[None, :], sample_rate_hz=1.0)
    noise = rng.normal(size=(1, t.size))
    noisy = MultichannelSignal(data=clean.data + noise, sample_rate_hz=1.0)
    noisier = MultichannelSignal(data=clean.data + 10 * noise, sample_rate_hz=1.0)
    assert snr_db(noisy, clean)[0] == pytest.approx(-3.0103, abs=0.3)
    assert snr_db(noisy, clean)[0] - snr_db(noisier, clean)[0] == pytest.approx(20.0, abs=0.3)


def test_energy_stays_near_the_track():
    """With noise off, almost all power lies within three beam-spreads of a moving target."""
    target = TargetSpec(tonal_freqs_hz=[100.0], amplitudes=[1.0], start_beam=5.0, end_beam=12.0, beam_sigma=0.5)
    cfg = SimConfig(n_beams=20, sample_rate_hz=1024.0, duration_s=2.0, targets=[target], noise_sigma=0.0)
    clean = simulate(cfg).data
    power = np.sum(clean**2, axis=1)
    near = (np.arange(20) >= 5 - 1.5) & (np.arange(20) <= 12 + 1.5)
    assert power[~near].sum() < 0.01 * power.sum()


def test_beams_four_spreads_away_stay_quiet():
    """A noise-free static tone leaves beams at least four beam-spreads away below 1e-3 of its amplitude."""
    amplitude = 2.0
    target = TargetSpec(tonal_freqs_hz=[150.0], amplitudes=[amplitude], start_beam=10.0, end_beam=10.0, beam_sigma=0.5)
    cfg = SimConfig(n_beams=24, sample_rate_hz=1024.0, duration_s=1.0, targets=[target], noise_sigma=0.0)
    clean = simulate(cfg).data
    assert np.max(np.abs(clean[10])) == pytest.approx(amplitude, rel=1e-3)
    far = np.abs(np.arange(24) - 10.0) >= 4 * target.beam_sigma
    assert np.max(np.abs(clean[far])) < 1e-3 * amplitude
