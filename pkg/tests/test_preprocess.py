"""Unit tests for resampling, notch filtering and the filter bank."""

from unittest.mock import patch

import numpy as np
import pytest

from cvep_bci.containers import EpochSet, StimulusSequence
from cvep_bci.errors import ArgumentError, InvariantViolation
from cvep_bci.preprocess import (
    FilterBankSpec,
    default_filterbank,
    downsample,
    filterbank,
    frames_to_samples,
    notch_50hz,
)


def tone_epochs(freq_hz, fs_hz, duration_s, n_trials=2, phase=0.0):
    """Epochs holding one sinusoid on every trial and channel."""
    t = np.arange(round(duration_s * fs_hz)) / fs_hz
    tone = np.sin(2 * np.pi * freq_hz * t + phase)
    data = np.broadcast_to(tone, (n_trials, 2, t.size)).copy()
    return EpochSet(data, np.arange(n_trials), fs_hz)


def central_rms(data):
    """RMS over the middle half of the last axis."""
    n = data.shape[-1]
    middle = data[..., n // 4 : 3 * n // 4]
    return float(np.sqrt(np.mean(middle**2)))


def test_downsample_identity():
    """Test that a factor of 1 returns the input unchanged."""
    epochs = tone_epochs(10.0, 250.0, 1.0)
    assert downsample(epochs, 1) is epochs


def test_downsample_passband():
    """Test that a 10 Hz tone keeps its amplitude through 1000 -> 250 Hz."""
    epochs = tone_epochs(10.0, 1000.0, 4.0)
    result = downsample(epochs, 4)

    assert result.fs_hz == 250.0
    assert result.n_samples == 1000
    assert central_rms(result.data) == pytest.approx(central_rms(epochs.data), rel=0.01)


def test_downsample_stopband():
    """Test that a 300 Hz tone is removed before decimation."""
    epochs = tone_epochs(300.0, 1000.0, 4.0)
    result = downsample(epochs, 4)

    assert central_rms(result.data) < 0.05 * central_rms(epochs.data)


def test_downsample_invalid_factor():
    """Test non-integer factors and rates not divisible by the factor."""
    epochs = tone_epochs(10.0, 250.0, 1.0)
    with pytest.raises(ArgumentError):
        downsample(epochs, 2.5)
    with pytest.raises(ArgumentError):
        downsample(epochs, 3)


def test_notch_removes_line_noise():
    """Test that a pure 50 Hz tone is suppressed."""
    epochs = tone_epochs(50.0, 250.0, 8.0)
    result = notch_50hz(epochs)

    assert central_rms(result.data) < 0.02 * central_rms(epochs.data)


def test_notch_keeps_dc():
    """Test unity gain at 0 Hz."""
    epochs = EpochSet(np.full((1, 1, 1000), 3.0), np.array([0]), 250.0)
    result = notch_50hz(epochs)

    np.testing.assert_allclose(result.data, 3.0, rtol=1e-6)


def test_notch_passband():
    """Test that a 10 Hz tone passes the notch."""
    epochs = tone_epochs(10.0, 250.0, 8.0)
    result = notch_50hz(epochs)

    assert central_rms(result.data) == pytest.approx(central_rms(epochs.data), rel=0.01)


def test_notch_requires_rate_above_100hz():
    """Test that the notch refuses rates at or below twice the line frequency."""
    with pytest.raises(ArgumentError):
        notch_50hz(tone_epochs(10.0, 100.0, 1.0))


def test_filterbank_broadband_identity():
    """Test that a (1, 100) Hz band passes a 10 Hz tone."""
    epochs = tone_epochs(10.0, 250.0, 12.0)
    spec = FilterBankSpec(1, ((1.0, 100.0),))
    (band,) = filterbank(epochs, spec)

    assert central_rms(band.data) == pytest.approx(central_rms(epochs.data), rel=0.02)


def test_filterbank_stopband():
    """Test that a 12 Hz tone is removed by a (40, 90) Hz band."""
    epochs = tone_epochs(12.0, 250.0, 8.0)
    (band,) = filterbank(epochs, FilterBankSpec(1, ((40.0, 90.0),)))

    assert central_rms(band.data) < 0.05 * central_rms(epochs.data)


def test_filterbank_shapes():
    """Test one output per band, each with every input trial."""
    epochs = tone_epochs(10.0, 250.0, 1.0, n_trials=3)
    bands = filterbank(epochs, default_filterbank())

    assert len(bands) == 5
    assert all(band.n_trials == 3 for band in bands)
    assert all(band.data.shape == epochs.data.shape for band in bands)


def test_default_filterbank_edges():
    """Test the (8n, 90) Hz default bands."""
    spec = default_filterbank()
    assert spec.band_edges == (
        (8.0, 90.0),
        (16.0, 90.0),
        (24.0, 90.0),
        (32.0, 90.0),
        (40.0, 90.0),
    )


def test_filterbank_edge_above_nyquist():
    """Test that a band edge above Nyquist is an argument error."""
    with pytest.raises(ArgumentError):
        filterbank(tone_epochs(10.0, 250.0, 1.0), FilterBankSpec(1, ((8.0, 130.0),)))


def test_filterbank_spec_invariants():
    """Test band count and ordering checks."""
    with pytest.raises(InvariantViolation):
        FilterBankSpec(2, ((8.0, 90.0),))
    with pytest.raises(InvariantViolation):
        FilterBankSpec(1, ((90.0, 8.0),))


def test_filters_are_zero_phase():
    """Test that a passband tone is not delayed."""
    epochs = tone_epochs(20.0, 250.0, 4.0, phase=0.3)
    (band,) = filterbank(epochs, FilterBankSpec(1, ((8.0, 90.0),)))
    x = epochs.data[0, 0, 250:750]
    lags = np.arange(-5, 6)
    corr = [np.dot(x, band.data[0, 0, 250 + lag : 750 + lag]) for lag in lags]

    assert lags[int(np.argmax(corr))] == 0


def test_filters_are_linear():
    """Test superposition for the filter bank, notch and downsampler."""
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 2, 1000))
    y = rng.standard_normal((2, 2, 1000))
    labels = np.array([0, 1])

    def combine(data):
        return EpochSet(data, labels, 1000.0)

    for transform in (
        lambda e: filterbank(e, default_filterbank())[2],
        notch_50hz,
        lambda e: downsample(e, 4),
    ):
        mixed = transform(combine(2.0 * x - 0.5 * y)).data
        separate = 2.0 * transform(combine(x)).data - 0.5 * transform(combine(y)).data
        scale = np.abs(mixed).max()
        np.testing.assert_allclose(mixed, separate, rtol=0, atol=1e-9 * scale)


def test_frames_to_samples_identity_rate():
    """Test that the frame rate itself reproduces the frames."""
    frames = np.linspace(0.0, 1.0, 12)
    seq = StimulusSequence(0, frames)
    np.testing.assert_array_equal(frames_to_samples(seq, 60.0, 12), frames)


def test_frames_to_samples_double_rate():
    """Test that 120 Hz repeats every frame twice."""
    frames = np.array([0.1, 0.2, 0.3])
    seq = StimulusSequence(0, frames)
    np.testing.assert_array_equal(
        frames_to_samples(seq, 120.0, 6), [0.1, 0.1, 0.2, 0.2, 0.3, 0.3]
    )


def test_frames_to_samples_eeg_rate():
    """Test the hold at 250 Hz over a 3 s code."""
    frames = np.arange(180) / 179.0
    samples = frames_to_samples(StimulusSequence(0, frames), 250.0, 750)

    assert samples.size == 750
    assert samples[10] == frames[2]
    assert samples[749] == frames[179]


def test_frames_to_samples_padding():
    """Test zero padding past the stimulus and the strict policy."""
    seq = StimulusSequence(0, np.ones(6))
    with patch("cvep_bci.preprocess.logger") as mock_logger:
        samples = frames_to_samples(seq, 60.0, 8)
        mock_logger.warning.assert_called_once()
    np.testing.assert_array_equal(samples, [1, 1, 1, 1, 1, 1, 0, 0])

    with pytest.raises(ArgumentError):
        frames_to_samples(seq, 60.0, 8, pad_policy="error")


def test_frames_to_samples_rate_below_frame_rate():
    """Test that EEG rates below the display rate are refused."""
    with pytest.raises(ArgumentError):
        frames_to_samples(StimulusSequence(0, np.ones(6)), 30.0, 3)
