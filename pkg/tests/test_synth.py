"""Unit tests for the forward simulator and virtual populations."""

import dataclasses

import numpy as np
import pytest

from cvep_bci.containers import EpochSet
from cvep_bci.decoder import batch_decode, onset_scan
from cvep_bci.errors import ArgumentError, InvariantViolation
from cvep_bci.stimulus import generate_wn_pool
from cvep_bci.synth import (
    DEFAULT_CHANNELS,
    OCCIPITAL_PATTERN,
    NoiseSpec,
    PopulationSpec,
    VirtualSubject,
    delay_taps,
    make_population,
    population_from_dict,
    population_to_dict,
    prototype_trf,
    simulate_continuous,
    simulate_epochs,
    structured_noise,
)
from cvep_bci.tdca import fit_tdca, spatial_filter
from cvep_bci.trf import (
    build_linear_templates,
    codebook_waveforms,
    fit_trf_from_epochs,
    reconstruct_responses,
)

FS = 250.0
N_CHANNELS = len(DEFAULT_CHANNELS)


def unit_pattern(index=0):
    pattern = np.zeros(N_CHANNELS)
    pattern[index] = 1.0
    return pattern


def silent_subject(gain=0.0, pattern=None):
    """A noiseless subject responding with the prototype TRF."""
    return VirtualSubject(
        "S01",
        prototype_trf(FS),
        unit_pattern() if pattern is None else pattern,
        FS,
        nonlinearity_gain=gain,
        noise=NoiseSpec.silent(),
        seed=3,
    )


@pytest.fixture
def codebook():
    """Four 1 s white-noise codes at 60 Hz."""
    return generate_wn_pool(4, 60, seed=1)


def test_prototype_has_three_alternating_lobes():
    """Test that the prototype has exactly three sign-alternating extrema."""
    taps = prototype_trf(FS)
    inner = taps[1:-1]
    peaks = (inner > taps[:-2]) & (inner > taps[2:])
    troughs = (inner < taps[:-2]) & (inner < taps[2:])
    extrema = np.flatnonzero((peaks | troughs) & (np.abs(inner) > 0.1)) + 1

    assert extrema.size == 3
    np.testing.assert_array_equal(np.sign(taps[extrema]), [-1.0, 1.0, -1.0])


def test_prototype_peak_and_support():
    """Test the 100 ms positive peak, unit magnitude and energy inside 0.3 s."""
    taps = prototype_trf(FS)
    assert abs(int(np.argmax(taps)) - round(0.1 * FS)) <= 1
    assert np.abs(taps).max() == pytest.approx(1.0)

    support = round(0.3 * FS) + 1
    assert np.sum(taps[support:] ** 2) < 0.01 * np.sum(taps**2)


def test_prototype_window_must_cover_support():
    """Test that lag windows missing part of [0, 0.3] s are refused."""
    with pytest.raises(ArgumentError):
        prototype_trf(FS, tau_min_s=0.05)
    with pytest.raises(ArgumentError):
        prototype_trf(FS, tau_max_s=0.2)


def test_delay_taps_fills_with_zeros():
    """Test forward and backward shifts without wrap-around."""
    taps = np.array([1.0, 2.0, 3.0, 4.0])
    np.testing.assert_array_equal(delay_taps(taps, 1), [0.0, 1.0, 2.0, 3.0])
    np.testing.assert_array_equal(delay_taps(taps, -2), [3.0, 4.0, 0.0, 0.0])
    np.testing.assert_array_equal(delay_taps(taps, 9), np.zeros(4))


def test_structured_noise_silent_and_shape():
    """Test that a silent spec yields zeros and components add variance."""
    rng = np.random.default_rng(0)
    assert not np.any(structured_noise(NoiseSpec.silent(), (3, 500), FS, rng))

    noise = structured_noise(NoiseSpec(1.0, 1.0, 1.0), (200, 2000), FS, rng)
    assert noise.shape == (200, 2000)
    assert noise.var() == pytest.approx(3.0, rel=0.1)


def test_noise_spec_invariants():
    """Test that negative levels and a zero alpha frequency are rejected."""
    with pytest.raises(InvariantViolation):
        NoiseSpec(white_std=-1.0)
    with pytest.raises(InvariantViolation):
        NoiseSpec(alpha_hz=0.0)


def test_virtual_subject_invariants():
    """Test that a zero pattern and mismatched channel names are rejected."""
    with pytest.raises(InvariantViolation):
        VirtualSubject("S01", prototype_trf(FS), np.zeros(N_CHANNELS))
    with pytest.raises(InvariantViolation):
        VirtualSubject("S01", prototype_trf(FS), np.ones(3))


def test_noiseless_forward_model_identity(codebook):
    """Test that channel one equals h * s and the other channels stay zero."""
    subject = silent_subject()
    epochs = simulate_epochs(subject, codebook, 2, 1.0)

    waveforms = codebook_waveforms(codebook, FS, 250, center=True)
    expected = reconstruct_responses(subject.true_trf(), waveforms, 250)
    np.testing.assert_array_equal(epochs.labels, [0, 1, 2, 3, 0, 1, 2, 3])
    np.testing.assert_allclose(epochs.data[:, 0], expected[epochs.labels])
    np.testing.assert_array_equal(epochs.data[:, 1:], 0.0)
    assert epochs.channel_names == DEFAULT_CHANNELS


def test_nonlinearity_adds_squared_source(codebook):
    """Test that the gain weights the squared linear response."""
    linear = simulate_epochs(silent_subject(), codebook, 1, 1.0)
    bent = simulate_epochs(silent_subject(gain=0.1), codebook, 1, 1.0)
    x = linear.data[:, 0]
    np.testing.assert_allclose(bent.data[:, 0], x + 0.1 * x**2)


def test_doubling_pattern_doubles_signal(codebook):
    """Test that doubling the pattern doubles the signal under fixed noise."""
    subject = dataclasses.replace(silent_subject(), noise=NoiseSpec())
    doubled = dataclasses.replace(subject, pattern=2 * subject.pattern)
    signal = simulate_epochs(silent_subject(), codebook, 2, 1.0).data

    base = simulate_epochs(subject, codebook, 2, 1.0, seed=5).data
    twice = simulate_epochs(doubled, codebook, 2, 1.0, seed=5).data
    np.testing.assert_allclose(twice - base, signal, atol=1e-12)


def test_simulation_is_deterministic(codebook):
    """Test bit-identical output for one seed regardless of worker count."""
    subject = dataclasses.replace(silent_subject(), noise=NoiseSpec())
    first = simulate_epochs(subject, codebook, 3, 1.0, snr_db=0.0, seed=9)
    second = simulate_epochs(subject, codebook, 3, 1.0, snr_db=0.0, seed=9, n_jobs=2)
    other = simulate_epochs(subject, codebook, 3, 1.0, snr_db=0.0, seed=10)

    np.testing.assert_array_equal(first.data, second.data)
    assert not np.array_equal(first.data, other.data)


def test_snr_sets_noise_power_and_noise_is_independent():
    """Test the channel SNR and that noise is uncorrelated with the signal."""
    codebook = generate_wn_pool(40, 180, seed=2)
    clean = silent_subject(gain=0.1, pattern=np.asarray(OCCIPITAL_PATTERN))
    noisy = dataclasses.replace(clean, noise=NoiseSpec())

    signal = simulate_epochs(clean, codebook, 1, 3.0).data
    data = simulate_epochs(noisy, codebook, 1, 3.0, snr_db=0.0, seed=4).data
    noise = data - signal

    assert np.mean(noise**2) == pytest.approx(np.mean(signal**2), rel=0.15)
    assert abs(np.corrcoef(signal.ravel(), noise.ravel())[0, 1]) < 0.05


def test_snr_needs_noise(codebook):
    """Test that an SNR cannot be set with a silent noise model."""
    with pytest.raises(ArgumentError):
        simulate_epochs(silent_subject(), codebook, 1, 1.0, snr_db=0.0)


def test_noiseless_trf_is_identifiable():
    """Test that a full-rank fit recovers the true TRF from noiseless data."""
    codebook = generate_wn_pool(8, 120, seed=6)
    subject = silent_subject()
    epochs = simulate_epochs(subject, codebook, 1, 2.0)
    sources = epochs.with_data(epochs.data[:, :1])

    trf = fit_trf_from_epochs(sources, codebook, 0.0, 0.5, alpha=1.0)
    error = np.linalg.norm(trf.taps - subject.trf) / np.linalg.norm(subject.trf)
    assert error < 1e-6


def test_end_to_end_decoding_at_zero_db():
    """Test linear-modeling templates on disjoint codes decode 0 dB data."""
    pool = generate_wn_pool(60, 180, seed=8)
    calib_codes = pool.subset(list(range(20)))
    test_codes = pool.subset(list(range(20, 60)))
    subject = make_population(PopulationSpec(n_subjects=1), 12)[0]

    calib = simulate_epochs(subject, calib_codes, 4, 3.0, snr_db=0.0, seed=1)
    test = simulate_epochs(subject, test_codes, 1, 3.0, snr_db=0.0, seed=2)
    model = fit_tdca(calib)
    trf = fit_trf_from_epochs(spatial_filter(calib, model), calib_codes)
    bank = build_linear_templates(trf, test_codes, FS, 3.0)

    assert batch_decode(test, model, bank).accuracy >= 0.95


def test_continuous_recording_embeds_the_trial(codebook):
    """Test that the stimulus window of a recording equals a stimulus-locked trial."""
    subject = silent_subject(gain=0.1)
    recording = simulate_continuous(subject, codebook.sequences[2], 1.0)
    trial = simulate_epochs(subject, codebook.subset([2]), 1, 1.0)

    assert recording.onset_sample == 125
    assert recording.n_samples == 500
    assert recording.class_id == 2
    np.testing.assert_array_equal(recording.data[:, :125], 0.0)
    np.testing.assert_allclose(
        recording.data[:, 125:375], trial.data[0], atol=1e-12
    )
    assert np.any(recording.data[0, 375:])


def test_continuous_recording_onset_is_found():
    """Test that the onset scan finds a simulated onset and its class."""
    codebook = generate_wn_pool(40, 60, seed=14)
    subject = silent_subject()
    recording = simulate_continuous(subject, codebook.sequences[7], 1.0)
    bank = build_linear_templates(subject.true_trf(), codebook, FS, 1.0)

    scan = onset_scan(recording.data[0], bank, recording.onset_sample)
    assert scan.detected_onset_ms == 0.0
    assert scan.predicted_class == 7


def test_zero_jitter_population_is_identical():
    """Test that subjects drawn without jitter share TRF and pattern."""
    spec = PopulationSpec(
        n_subjects=4,
        amplitude_range=(1.0, 1.0),
        latency_range_s=(0.0, 0.0),
        pattern_jitter=0.0,
    )
    subjects = make_population(spec, seed=0)

    assert [s.subject_id for s in subjects] == ["S01", "S02", "S03", "S04"]
    for subject in subjects[1:]:
        np.testing.assert_array_equal(subject.trf, subjects[0].trf)
        np.testing.assert_array_equal(subject.pattern, subjects[0].pattern)
    np.testing.assert_array_equal(subjects[0].trf, prototype_trf(FS))


def test_latency_jitter_is_bounded():
    """Test that TRF cross-correlation lags stay within the latency range."""
    spec = PopulationSpec(amplitude_range=(1.0, 1.0), pattern_jitter=0.0)
    prototype = prototype_trf(FS)
    lags = []
    for subject in make_population(spec, seed=21):
        xcorr = np.correlate(subject.trf, prototype, mode="full")
        lags.append(int(np.argmax(xcorr)) - (prototype.size - 1))

    assert max(abs(lag) for lag in lags) <= round(0.02 * FS)
    assert len(set(lags)) > 1


def test_population_is_deterministic_and_round_trips():
    """Test that a seed fixes the population and that it survives JSON."""
    spec = PopulationSpec(n_subjects=3)
    first = make_population(spec, seed=5)
    second = population_from_dict(population_to_dict(make_population(spec, seed=5)))

    for a, b in zip(first, second):
        assert a.subject_id == b.subject_id
        assert a.seed == b.seed
        np.testing.assert_array_equal(a.trf, b.trf)
        np.testing.assert_array_equal(a.pattern, b.pattern)
    assert len({s.seed for s in first}) == 3


def test_population_spec_round_trip_and_invariants():
    """Test the spec dictionary form and rejection of bad ranges."""
    spec = PopulationSpec(n_subjects=2, noise=NoiseSpec(0.5, 0.0, 0.2))
    assert PopulationSpec.from_dict(spec.to_dict()) == spec

    with pytest.raises(InvariantViolation):
        PopulationSpec(n_subjects=0)
    with pytest.raises(InvariantViolation):
        PopulationSpec(latency_range_s=(0.02, -0.02))
    with pytest.raises(InvariantViolation):
        PopulationSpec(amplitude_range=(0.0, 1.0))


def test_epochs_are_epoch_sets(codebook):
    """Test that simulated trials carry the subject's rate and labels."""
    epochs = simulate_epochs(silent_subject(), codebook, 1, 0.5)
    assert isinstance(epochs, EpochSet)
    assert epochs.fs_hz == FS
    assert epochs.n_samples == 125
