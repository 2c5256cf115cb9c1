"""
Forward simulator for WN cVEP recordings

Virtual subjects respond to the contrast of a stimulus through a known TRF and
project that source onto the scalp through a known spatial pattern. Every
channel adds independent white, pink and alpha-band noise. The simulator is the
ground truth that the estimators are checked against.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from joblib import Parallel, delayed

from cvep_bci.containers import Codebook, EpochSet, StimulusSequence, frozen_array
from cvep_bci.errors import ArgumentError, InvariantViolation
from cvep_bci.trf import (
    DEFAULT_TAU_MAX_S,
    DEFAULT_TAU_MIN_S,
    Trf,
    codebook_waveforms,
    n_lags,
    reconstruct_responses,
    stimulus_waveform,
)

logger = logging.getLogger(__name__)

DEFAULT_FS_HZ = 250.0
DEFAULT_NONLINEARITY_GAIN = 0.1
ALPHA_PEAK_HZ = 10.0

# Occipito-parietal montage used for SSVEP/cVEP spellers
DEFAULT_CHANNELS = ("PZ", "PO5", "PO3", "POZ", "PO4", "PO6", "O1", "OZ", "O2")
OCCIPITAL_PATTERN = (0.3, 0.5, 0.6, 0.7, 0.6, 0.5, 0.8, 1.0, 0.8)

# (latency s, standard deviation s, signed amplitude) of the VEP lobes
PROTOTYPE_LOBES = (
    (0.060, 0.008, -0.6),
    (0.100, 0.010, 1.0),
    (0.180, 0.0127, -0.5),
)
PROTOTYPE_SUPPORT_S = 0.3


def prototype_trf(
    fs_hz: float = DEFAULT_FS_HZ,
    tau_min_s: float = DEFAULT_TAU_MIN_S,
    tau_max_s: float = DEFAULT_TAU_MAX_S,
) -> np.ndarray:
    """Return a three-lobed VEP impulse response with peak magnitude one.

    The lobes are negative at 60 ms, positive at 100 ms and negative at 180 ms.
    The window must contain [0, 0.3] s.
    """
    if tau_min_s > 0.0 or tau_max_s < PROTOTYPE_SUPPORT_S:
        raise ArgumentError(
            f"lag window [{tau_min_s}, {tau_max_s}] s must contain "
            f"[0, {PROTOTYPE_SUPPORT_S}] s"
        )
    offset = round(tau_min_s * fs_hz)
    lags = (offset + np.arange(n_lags(tau_min_s, tau_max_s, fs_hz))) / fs_hz
    taps = sum(
        amplitude * np.exp(-0.5 * ((lags - latency) / width) ** 2)
        for latency, width, amplitude in PROTOTYPE_LOBES
    )
    return taps / np.abs(taps).max()


def delay_taps(taps: np.ndarray, shift: int) -> np.ndarray:
    """Shift taps by ``shift`` samples, filling with zeros instead of wrapping."""
    shifted = np.zeros_like(taps)
    if abs(shift) >= taps.size:
        return shifted
    if shift >= 0:
        shifted[shift:] = taps[: taps.size - shift]
    else:
        shifted[:shift] = taps[-shift:]
    return shifted


@dataclass(frozen=True, slots=True)
class NoiseSpec:
    """Standard deviations of the independent noise components per channel."""

    white_std: float = 1.0
    pink_std: float = 1.0
    alpha_std: float = 1.0
    alpha_hz: float = ALPHA_PEAK_HZ
    alpha_bandwidth_hz: float = 1.5

    def __post_init__(self) -> None:
        if min(self.white_std, self.pink_std, self.alpha_std) < 0:
            raise InvariantViolation("noise standard deviations must be >= 0")
        if not self.alpha_hz > 0 or not self.alpha_bandwidth_hz > 0:
            raise InvariantViolation("alpha peak and bandwidth must be positive")

    @classmethod
    def silent(cls) -> NoiseSpec:
        return cls(0.0, 0.0, 0.0)

    @property
    def variance(self) -> float:
        return self.white_std**2 + self.pink_std**2 + self.alpha_std**2

    def to_dict(self) -> dict[str, float]:
        return {
            "white_std": self.white_std,
            "pink_std": self.pink_std,
            "alpha_std": self.alpha_std,
            "alpha_hz": self.alpha_hz,
            "alpha_bandwidth_hz": self.alpha_bandwidth_hz,
        }

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> NoiseSpec:
        return cls(**{key: float(value) for key, value in payload.items()})


def _shaped_noise(
    mask: np.ndarray, shape: tuple[int, ...], rng: np.random.Generator
) -> np.ndarray:
    """Unit-variance Gaussian noise with amplitude spectrum ``mask``."""
    n = shape[-1]
    white = rng.standard_normal(shape)
    shaped = np.fft.irfft(np.fft.rfft(white, axis=-1) * mask, n=n, axis=-1)
    power = np.mean(mask**2)
    return shaped / np.sqrt(power) if power > 0 else shaped


def structured_noise(
    spec: NoiseSpec,
    shape: tuple[int, ...],
    fs_hz: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """White, 1/f and alpha-band noise, independent across leading axes."""
    n = shape[-1]
    freqs = np.fft.rfftfreq(n, 1.0 / fs_hz)
    noise = np.zeros(shape)
    if spec.white_std:
        noise += spec.white_std * rng.standard_normal(shape)
    if spec.pink_std:
        pink = np.zeros_like(freqs)
        pink[1:] = 1.0 / np.sqrt(freqs[1:])
        noise += spec.pink_std * _shaped_noise(pink, shape, rng)
    if spec.alpha_std:
        alpha = np.exp(-0.5 * ((freqs - spec.alpha_hz) / spec.alpha_bandwidth_hz) ** 2)
        noise += spec.alpha_std * _shaped_noise(alpha, shape, rng)
    return noise


@dataclass(frozen=True, slots=True, eq=False)
class VirtualSubject:
    """Ground-truth response model of one simulated participant."""

    subject_id: str
    trf: np.ndarray
    pattern: np.ndarray
    fs_hz: float = DEFAULT_FS_HZ
    tau_min_s: float = DEFAULT_TAU_MIN_S
    nonlinearity_gain: float = DEFAULT_NONLINEARITY_GAIN
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    seed: int = 0
    channel_names: tuple[str, ...] = DEFAULT_CHANNELS

    def __post_init__(self) -> None:
        trf = frozen_array(self.trf)
        pattern = frozen_array(self.pattern)
        if trf.ndim != 1 or trf.size < 2:
            raise InvariantViolation("trf must be a vector of at least two taps")
        if pattern.ndim != 1 or not np.any(pattern):
            raise InvariantViolation("pattern must be a non-zero vector")
        if len(self.channel_names) != pattern.size:
            raise InvariantViolation(
                f"{len(self.channel_names)} channel names for {pattern.size} channels"
            )
        if self.nonlinearity_gain < 0:
            raise InvariantViolation("nonlinearity_gain must be >= 0")
        object.__setattr__(self, "trf", trf)
        object.__setattr__(self, "pattern", pattern)
        object.__setattr__(self, "channel_names", tuple(self.channel_names))

    @property
    def n_channels(self) -> int:
        return int(self.pattern.size)

    @property
    def tau_max_s(self) -> float:
        return self.tau_min_s + (self.trf.size - 1) / self.fs_hz

    def true_trf(self) -> Trf:
        return Trf(self.trf, self.tau_min_s, self.tau_max_s, self.fs_hz)

    def to_dict(self) -> dict[str, Any]:
        return {
            "subject_id": self.subject_id,
            "trf": self.trf.tolist(),
            "pattern": self.pattern.tolist(),
            "fs_hz": self.fs_hz,
            "tau_min_s": self.tau_min_s,
            "nonlinearity_gain": self.nonlinearity_gain,
            "noise": self.noise.to_dict(),
            "seed": self.seed,
            "channel_names": list(self.channel_names),
        }

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> VirtualSubject:
        return cls(
            str(payload["subject_id"]),
            np.asarray(payload["trf"], dtype=np.float64),
            np.asarray(payload["pattern"], dtype=np.float64),
            float(payload["fs_hz"]),
            float(payload["tau_min_s"]),
            float(payload["nonlinearity_gain"]),
            NoiseSpec.from_dict(payload["noise"]),
            int(payload["seed"]),
            tuple(payload["channel_names"]),
        )


def source_response(subject: VirtualSubject, waveforms: np.ndarray) -> np.ndarray:
    """Source activity y = h * s + g (h * s)^2 for stimulus waveforms (..., n)."""
    linear = reconstruct_responses(subject.true_trf(), waveforms, waveforms.shape[-1])
    return linear + subject.nonlinearity_gain * linear**2


def _noise_scale(
    subject: VirtualSubject, signal_power: float, snr_db: float | None
) -> float:
    """Factor applied to the subject's noise so the channel SNR equals ``snr_db``."""
    if snr_db is None:
        return 1.0
    if subject.noise.variance == 0:
        raise ArgumentError("cannot set an SNR with a silent noise model")
    if signal_power == 0:
        raise ArgumentError("cannot set an SNR for a silent signal")
    target = signal_power / 10 ** (snr_db / 10)
    return float(np.sqrt(target / subject.noise.variance))


def _trial_noise(
    subject: VirtualSubject, n_samples: int, seed: int, index: int
) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, index]))
    return structured_noise(
        subject.noise, (subject.n_channels, n_samples), subject.fs_hz, rng
    )


def simulate_epochs(
    subject: VirtualSubject,
    codebook: Codebook,
    n_trials_per_class: int,
    duration_s: float,
    snr_db: float | None = None,
    seed: int | None = None,
    n_jobs: int = 1,
) -> EpochSet:
    """Simulate stimulus-locked trials of every code in ``codebook``.

    Trials are ordered in blocks: block r shows every class once, in class
    order. With ``snr_db`` the noise is rescaled so that the mean signal power
    per channel over the mean noise power per channel equals that ratio.

    Args:
        subject: Response model.
        codebook: Codes presented; labels are their class ids.
        n_trials_per_class: Repetitions of every code.
        duration_s: Trial length from stimulus onset.
        snr_db: Channel SNR; None keeps the subject's noise levels.
        seed: Noise seed; defaults to the subject's seed.
        n_jobs: Worker count for per-trial noise generation.
    """
    if n_trials_per_class < 1 or not duration_s > 0:
        raise ArgumentError("need at least one trial per class and a positive duration")
    fs_hz = subject.fs_hz
    n_samples = round(duration_s * fs_hz)
    waveforms = codebook_waveforms(codebook, fs_hz, n_samples, center=True)
    sources = source_response(subject, waveforms)

    labels = np.tile(np.arange(len(codebook)), n_trials_per_class)
    signal = subject.pattern[None, :, None] * sources[labels][:, None, :]
    signal_power = float(np.mean(subject.pattern**2) * np.mean(sources**2))
    scale = _noise_scale(subject, signal_power, snr_db)

    base_seed = subject.seed if seed is None else seed
    noise = Parallel(n_jobs=n_jobs)(
        delayed(_trial_noise)(subject, n_samples, base_seed, index)
        for index in range(labels.size)
    )
    data = signal + scale * np.stack(noise)
    logger.debug(
        "Simulated %d trials of %s (%d classes, %.2f s)",
        labels.size,
        subject.subject_id,
        len(codebook),
        duration_s,
    )
    return EpochSet(data, labels, fs_hz, subject.channel_names)


@dataclass(frozen=True, slots=True, eq=False)
class ContinuousRecording:
    """Untriggered multichannel recording with one embedded stimulus."""

    data: np.ndarray
    fs_hz: float
    onset_sample: int
    class_id: int
    channel_names: tuple[str, ...]

    @property
    def n_samples(self) -> int:
        return int(self.data.shape[-1])


def simulate_continuous(
    subject: VirtualSubject,
    sequence: StimulusSequence,
    duration_s: float,
    pre_s: float = 0.5,
    post_s: float = 0.5,
    snr_db: float | None = None,
    seed: int | None = None,
) -> ContinuousRecording:
    """Simulate a recording holding ``pre_s`` of rest, the stimulus, then rest.

    The response keeps ringing into the post-stimulus rest.
    """
    if min(pre_s, post_s) < 0 or not duration_s > 0:
        raise ArgumentError("durations must be positive and rests non-negative")
    fs_hz = subject.fs_hz
    onset = round(pre_s * fs_hz)
    n_stimulus = round(duration_s * fs_hz)
    n_total = onset + n_stimulus + round(post_s * fs_hz)

    waveform = np.zeros(n_total)
    waveform[onset : onset + n_stimulus] = stimulus_waveform(
        sequence, fs_hz, n_stimulus, center=True
    )
    source = source_response(subject, waveform)
    signal = subject.pattern[:, None] * source[None, :]
    signal_power = float(
        np.mean(subject.pattern**2) * np.mean(source[onset : onset + n_stimulus] ** 2)
    )
    scale = _noise_scale(subject, signal_power, snr_db)
    noise = _trial_noise(
        subject, n_total, subject.seed if seed is None else seed, sequence.class_id
    )
    return ContinuousRecording(
        signal + scale * noise,
        fs_hz,
        onset,
        sequence.class_id,
        subject.channel_names,
    )


@dataclass(frozen=True, slots=True)
class PopulationSpec:
    """How virtual subjects vary around the prototype response."""

    n_subjects: int = 10
    amplitude_range: tuple[float, float] = (0.8, 1.2)
    latency_range_s: tuple[float, float] = (-0.02, 0.02)
    pattern_jitter: float = 0.1
    fs_hz: float = DEFAULT_FS_HZ
    tau_min_s: float = DEFAULT_TAU_MIN_S
    tau_max_s: float = DEFAULT_TAU_MAX_S
    nonlinearity_gain: float = DEFAULT_NONLINEARITY_GAIN
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    pattern: tuple[float, ...] = OCCIPITAL_PATTERN
    channel_names: tuple[str, ...] = DEFAULT_CHANNELS

    def __post_init__(self) -> None:
        if self.n_subjects < 1:
            raise InvariantViolation("n_subjects must be at least 1")
        for name in ("amplitude_range", "latency_range_s"):
            low, high = getattr(self, name)
            if not (np.isfinite(low) and np.isfinite(high) and low <= high):
                raise InvariantViolation(f"{name} must be a finite (low, high) pair")
            object.__setattr__(self, name, (float(low), float(high)))
        if self.amplitude_range[0] <= 0:
            raise InvariantViolation("amplitudes must be positive")
        if not np.isfinite(self.pattern_jitter) or self.pattern_jitter < 0:
            raise InvariantViolation("pattern_jitter must be finite and >= 0")
        if len(self.pattern) != len(self.channel_names):
            raise InvariantViolation("one pattern weight per channel is required")
        object.__setattr__(self, "pattern", tuple(float(w) for w in self.pattern))
        object.__setattr__(self, "channel_names", tuple(self.channel_names))

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_subjects": self.n_subjects,
            "amplitude_range": list(self.amplitude_range),
            "latency_range_s": list(self.latency_range_s),
            "pattern_jitter": self.pattern_jitter,
            "fs_hz": self.fs_hz,
            "tau_min_s": self.tau_min_s,
            "tau_max_s": self.tau_max_s,
            "nonlinearity_gain": self.nonlinearity_gain,
            "noise": self.noise.to_dict(),
            "pattern": list(self.pattern),
            "channel_names": list(self.channel_names),
        }

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> PopulationSpec:
        values = dict(payload)
        if "noise" in values:
            values["noise"] = NoiseSpec.from_dict(values["noise"])
        for key in ("amplitude_range", "latency_range_s", "pattern", "channel_names"):
            if key in values:
                values[key] = tuple(values[key])
        return cls(**values)


def make_population(spec: PopulationSpec, seed: int) -> list[VirtualSubject]:
    """Draw subjects whose TRFs are scaled and delayed copies of the prototype."""
    rng = np.random.default_rng(seed)
    prototype = prototype_trf(spec.fs_hz, spec.tau_min_s, spec.tau_max_s)
    base_pattern = np.asarray(spec.pattern)
    subjects = []
    for index in range(spec.n_subjects):
        amplitude = rng.uniform(*spec.amplitude_range)
        shift = round(rng.uniform(*spec.latency_range_s) * spec.fs_hz)
        jitter = spec.pattern_jitter * rng.standard_normal(base_pattern.size)
        subjects.append(
            VirtualSubject(
                f"S{index + 1:02d}",
                amplitude * delay_taps(prototype, shift),
                base_pattern * (1.0 + jitter),
                spec.fs_hz,
                spec.tau_min_s,
                spec.nonlinearity_gain,
                spec.noise,
                int(rng.integers(2**31)),
                spec.channel_names,
            )
        )
    logger.info("Drew a population of %d virtual subjects", spec.n_subjects)
    return subjects


def population_to_dict(subjects: Sequence[VirtualSubject]) -> dict[str, Any]:
    return {"subjects": [subject.to_dict() for subject in subjects]}


def population_from_dict(payload: dict[str, Any]) -> list[VirtualSubject]:
    return [VirtualSubject.from_dict(item) for item in payload["subjects"]]
