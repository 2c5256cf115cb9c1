"""Unit tests for ITR, spectral SNR, mutual information and evaluation helpers."""

import math
from unittest.mock import patch

import numpy as np
import pytest

from cvep_bci.containers import EpochSet
from cvep_bci.errors import ArgumentError, NoNoiseEstimate
from cvep_bci.metrics import (
    ItrInput,
    Performance,
    SnrReport,
    confusion_and_accuracy,
    format_performance_table,
    itr,
    itr_bpm,
    large_target_sweep,
    mutual_information,
    selection_time_s,
    snr_spectrum,
)
from cvep_bci.stimulus import generate_wn_pool
from cvep_bci.synth import prototype_trf
from cvep_bci.trf import Trf, codebook_waveforms, reconstruct_responses

FS = 250.0


@pytest.mark.parametrize(
    ("accuracy", "stimulus_s", "expected"),
    [
        (1.0, 2.0, 127.73),
        (0.945, 0.75, 226.75),
        (0.935, 2.0, 111.15),
        (0.47, 0.75, 73.12),
    ],
)
def test_itr_reproduces_reported_rows(accuracy, stimulus_s, expected):
    """Test reported (accuracy, ITR) pairs for 40 targets and a 0.5 s gaze shift."""
    rate = itr_bpm(40, accuracy, selection_time_s(stimulus_s))
    assert rate == pytest.approx(expected, abs=0.01)


def test_itr_at_chance_is_zero():
    """Test that chance accuracy carries no information."""
    assert itr(ItrInput(40, 1 / 40, 3.0)) == pytest.approx(0.0, abs=1e-9)


def test_itr_perfect_accuracy_closed_form():
    """Test itr(M, 1, T) == log2(M) * 60 / T."""
    assert itr(ItrInput(8, 1.0, 1.5)) == pytest.approx(3 * 60 / 1.5, rel=1e-15)


def test_itr_monotone_in_accuracy_and_time():
    """Test that ITR grows with accuracy above chance and falls with time."""
    accuracies = np.linspace(1 / 40 + 1e-3, 1.0, 50)
    rates = [itr_bpm(40, p, 2.0) for p in accuracies]
    assert np.all(np.diff(rates) > 0)
    assert itr_bpm(40, 0.9, 4.0) == pytest.approx(itr_bpm(40, 0.9, 2.0) / 2)


def test_itr_below_chance_is_still_computed():
    """Test that accuracies under 1/M return the formula value."""
    assert math.isfinite(itr_bpm(40, 0.0, 2.0))


def test_itr_input_invariants():
    """Test that invalid targets, accuracies and times are rejected."""
    with pytest.raises(ArgumentError):
        ItrInput(1, 1.0, 1.0)
    with pytest.raises(ArgumentError):
        ItrInput(40, 1.5, 1.0)
    with pytest.raises(ArgumentError):
        ItrInput(40, 0.9, 0.0)


def test_selection_time_adds_gaze_shift():
    """Test the default and explicit gaze shift."""
    assert selection_time_s(2.0) == 2.5
    assert selection_time_s(1.0, gaze_shift_s=0.25) == 1.25


def one_class(data):
    data = np.asarray(data, dtype=float)
    return EpochSet(data[:, None, :], np.zeros(data.shape[0], dtype=int), FS)


def test_snr_needs_two_trials():
    """Test that a single trial has no noise estimate."""
    with pytest.raises(NoNoiseEstimate):
        snr_spectrum(one_class(np.ones((1, 100))))


def test_snr_needs_a_single_class():
    """Test that trials of several classes are refused."""
    epochs = EpochSet(np.ones((2, 1, 100)), np.array([0, 1]), FS)
    with pytest.raises(ArgumentError):
        snr_spectrum(epochs)


def test_identical_trials_give_infinite_snr():
    """Test the infinite sentinel and its warning for noiseless trials."""
    t = np.arange(500) / FS
    trials = np.tile(np.sin(2 * np.pi * 10 * t), (3, 1))

    with patch("cvep_bci.metrics.logger") as mock_logger:
        report = snr_spectrum(one_class(trials))
        mock_logger.warning.assert_called()

    assert np.isinf(report.snr[report.freqs_hz == 10.0]).all()
    assert report.mutual_info_bits_per_s == math.inf
    assert report.to_dict()["mutual_info_bits_per_s"] == "inf"


def test_antisymmetric_pair_has_zero_snr():
    """Test that a zero trial mean gives zero SNR and information."""
    rng = np.random.default_rng(0)
    x = rng.standard_normal(500)
    report = snr_spectrum(one_class([x, -x]))

    np.testing.assert_allclose(report.snr, 0.0, atol=1e-20)
    assert report.mutual_info_bits_per_s == pytest.approx(0.0, abs=1e-12)


def test_noise_spectrum_parseval():
    """Test that the integrated noise spectrum equals the residual power."""
    rng = np.random.default_rng(1)
    trials = rng.standard_normal((6, 500)) + np.sin(np.arange(500) / 7)
    report = snr_spectrum(one_class(trials))

    residuals = trials - trials.mean(axis=0)
    power = np.sum(residuals.var(axis=1))
    df = report.freqs_hz[1] - report.freqs_hz[0]
    assert np.sum(report.noise_psd) * df == pytest.approx(power, rel=1e-6)


def test_tone_snr_matches_closed_form():
    """Test the SNR at a tone bin against A^2 n / (4 (K - 1) sigma^2)."""
    n, k, amplitude, sigma = 1000, 20, 1.0, 5.0
    tone = amplitude * np.sin(2 * np.pi * 10.0 * np.arange(n) / FS)
    expected = amplitude**2 * n / (4 * (k - 1) * sigma**2)

    ratios = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        report = snr_spectrum(one_class(tone + sigma * rng.standard_normal((k, n))))
        ratios.append(report.snr[report.freqs_hz == 10.0][0] / expected)
    assert np.median(ratios) == pytest.approx(1.0, abs=0.25)


def test_default_upper_limit():
    """Test that the integration limit defaults to 125 Hz."""
    rng = np.random.default_rng(2)
    report = snr_spectrum(one_class(rng.standard_normal((4, 500))))
    assert report.upper_hz == 125.0
    assert report.mutual_info_bits_per_s == pytest.approx(
        mutual_information(report, 125.0)
    )


def flat_report(snr):
    freqs = np.linspace(0.0, 125.0, 501)
    values = np.broadcast_to(np.asarray(snr, dtype=float), freqs.shape)
    return SnrReport(freqs, values, values, np.ones_like(freqs), 0.0, 125.0)


def test_mutual_information_flat_snr():
    """Test the flat SNR = 1 closed form and SNR = 0."""
    assert mutual_information(flat_report(1.0), 125.0) == pytest.approx(
        125.0, abs=1e-9
    )
    assert mutual_information(flat_report(0.0), 125.0) == 0.0


def test_mutual_information_interpolates_endpoint():
    """Test integrals of a linear log-SNR density at and between grid points."""
    freqs = np.linspace(0.0, 125.0, 501)
    report = flat_report(2.0 ** (freqs / 125.0) - 1.0)

    assert mutual_information(report, 62.5) == pytest.approx(62.5**2 / 250)
    assert mutual_information(report, 100.1) == pytest.approx(100.1**2 / 250)
    assert mutual_information(report, 62.5) <= mutual_information(report, 125.0)


def test_mutual_information_limit_range():
    """Test that limits beyond the grid are refused."""
    with pytest.raises(ArgumentError):
        mutual_information(flat_report(1.0), 130.0)


def test_confusion_perfect():
    """Test an identity-supported matrix for perfect predictions."""
    labels = [0, 1, 2, 2]
    matrix, accuracy = confusion_and_accuracy(labels, labels)
    np.testing.assert_array_equal(matrix, np.diag([1.0, 1.0, 2.0]))
    assert accuracy == 1.0


def test_confusion_half_swapped():
    """Test two classes with half of the trials swapped."""
    matrix, accuracy = confusion_and_accuracy([0, 0, 1, 1], [0, 1, 1, 0])
    np.testing.assert_array_equal(matrix, [[1.0, 1.0], [1.0, 1.0]])
    assert accuracy == 0.5


def test_confusion_failed_trials_and_normalization():
    """Test that -1 counts as an error and rows can be normalized."""
    matrix, accuracy = confusion_and_accuracy(
        [0, 0, 1, 1], [0, -1, 1, 1], n_classes=3, normalize=True
    )
    np.testing.assert_allclose(
        matrix, [[0.5, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]]
    )
    assert accuracy == 0.75


def test_confusion_errors():
    """Test empty and mismatched inputs."""
    with pytest.raises(ArgumentError):
        confusion_and_accuracy([], [])
    with pytest.raises(ArgumentError):
        confusion_and_accuracy([0, 1], [0])


@pytest.fixture
def sweep_inputs():
    """Responses to the first 40 codes of a 400-code pool and the true TRF."""
    pool = generate_wn_pool(400, 60, seed=5)
    trf = Trf(prototype_trf(FS), 0.0, 0.5, FS)
    waveforms = codebook_waveforms(pool.subset(list(range(40))), FS, 250)
    responses = reconstruct_responses(trf, waveforms, 250)
    return pool, trf, responses


def test_large_target_sweep_noiseless(sweep_inputs):
    """Test perfect accuracy at every n on noiseless responses."""
    pool, trf, responses = sweep_inputs
    sources = EpochSet(responses[:, None, :], np.arange(40), FS)

    points = large_target_sweep(sources, trf, pool, range(40), n_list=(40, 400))
    assert [p.n_templates for p in points] == [40, 400]
    assert [p.accuracy for p in points] == [1.0, 1.0]
    assert points[0].itr_bpm == pytest.approx(itr_bpm(40, 1.0, 1.5))


def test_large_target_sweep_accuracy_non_increasing(sweep_inputs):
    """Test that adding distractor templates never raises accuracy."""
    pool, trf, responses = sweep_inputs
    rng = np.random.default_rng(7)
    noisy = responses + 2.0 * responses.std() * rng.standard_normal(responses.shape)
    sources = EpochSet(noisy[:, None, :], np.arange(40), FS)

    points = large_target_sweep(sources, trf, pool, range(40), (40, 100, 200, 400))
    accuracies = [p.accuracy for p in points]
    assert all(a >= b for a, b in zip(accuracies, accuracies[1:]))


def test_large_target_sweep_errors(sweep_inputs):
    """Test pools that are too small or miss a presented code."""
    pool, trf, responses = sweep_inputs
    sources = EpochSet(responses[:, None, :], np.arange(40), FS)
    with pytest.raises(ArgumentError):
        large_target_sweep(sources, trf, pool, range(40), (40, 500))
    with pytest.raises(ArgumentError):
        large_target_sweep(sources, trf, pool, range(60, 100), (40, 100))


def test_performance_table():
    """Test table cells, missing methods and the summary row."""
    rows = {
        "S1": {
            "Linear": Performance(0.935, 111.15),
            "Transfer": Performance(0.945, 226.75),
        },
        "S2": {"Linear": Performance(1.0, 127.73)},
    }
    text = format_performance_table(rows, title="Online results")
    lines = text.splitlines()

    assert lines[0] == "Online results"
    assert "Linear Acc (%)" in lines[1]
    assert "226.75" in lines[3]
    assert lines[4].split("|")[3].strip() == "-"
    assert lines[-1].startswith("Mean")
    assert "96.75 ± 3.25" in lines[-1]


def test_performance_table_without_summary():
    """Test a custom row label and no summary row."""
    rows = {"9 s": {"linear": Performance(0.5, 20.0)}}
    lines = format_performance_table(rows, row_label="Calibration", summary=False)

    header, _, row = lines.splitlines()
    assert header.startswith("Calibration")
    assert row.startswith("9 s")
    assert "50.00" in row
