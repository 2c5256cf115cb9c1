"""Resampling, notch and filter-bank filtering, stimulus alignment."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Literal

import numpy as np
from scipy import signal

from cvep_bci.containers import Codebook, EpochSet, StimulusSequence
from cvep_bci.errors import ArgumentError, InvariantViolation

logger = logging.getLogger(__name__)

DEFAULT_NOTCH_HZ = 50.0
DEFAULT_NOTCH_Q = 35.0
ANTIALIAS_ORDER = 8
# Anti-alias cutoff as a fraction of the new sampling rate
ANTIALIAS_FRACTION = 0.4
BANDPASS_ORDER = 4
DEFAULT_FB_STEP_HZ = 8.0
DEFAULT_FB_HIGH_HZ = 90.0

PadPolicy = Literal["zero", "error"]


@dataclass(frozen=True, slots=True)
class FilterBankSpec:
    """Band edges of a filter bank, one band-pass per sub-band."""

    n_bands: int
    band_edges: tuple[tuple[float, float], ...]
    filter_order: int = BANDPASS_ORDER
    zero_phase: bool = True

    def __post_init__(self) -> None:
        edges = tuple((float(low), float(high)) for low, high in self.band_edges)
        if self.n_bands < 1 or self.n_bands != len(edges):
            raise InvariantViolation(
                f"n_bands={self.n_bands} but {len(edges)} band edges given"
            )
        for low, high in edges:
            if not 0 < low < high:
                raise InvariantViolation(f"invalid band ({low}, {high})")
        if self.filter_order < 1:
            raise InvariantViolation("filter_order must be positive")
        object.__setattr__(self, "band_edges", edges)

    def check_rate(self, fs_hz: float) -> None:
        """Raise ArgumentError if any band edge reaches the Nyquist frequency."""
        for low, high in self.band_edges:
            if not high < fs_hz / 2:
                raise ArgumentError(
                    f"band ({low}, {high}) Hz reaches Nyquist at fs={fs_hz} Hz"
                )

    def to_dict(self) -> dict:
        return {
            "n_bands": self.n_bands,
            "band_edges": [list(edge) for edge in self.band_edges],
            "filter_order": self.filter_order,
            "zero_phase": self.zero_phase,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> FilterBankSpec:
        return cls(
            int(payload["n_bands"]),
            tuple(tuple(edge) for edge in payload["band_edges"]),
            int(payload.get("filter_order", BANDPASS_ORDER)),
            bool(payload.get("zero_phase", True)),
        )


def default_filterbank(
    n_bands: int = 5, high_hz: float = DEFAULT_FB_HIGH_HZ
) -> FilterBankSpec:
    """Bands (8n, high_hz) for n = 1..n_bands."""
    return FilterBankSpec(
        n_bands,
        tuple((DEFAULT_FB_STEP_HZ * n, high_hz) for n in range(1, n_bands + 1)),
    )


@lru_cache(maxsize=128)
def _butter_sos(
    order: int, low_hz: float | None, high_hz: float | None, fs_hz: float
) -> np.ndarray:
    if low_hz is None:
        return signal.butter(order, high_hz, btype="lowpass", fs=fs_hz, output="sos")
    return signal.butter(
        order, [low_hz, high_hz], btype="bandpass", fs=fs_hz, output="sos"
    )


def _sos_zero_phase(sos: np.ndarray, data: np.ndarray) -> np.ndarray:
    n = data.shape[-1]
    padlen = min(3 * 2 * len(sos), n - 1)
    return signal.sosfiltfilt(sos, data, axis=-1, padtype="even", padlen=padlen)


def bandpass_array(
    data: np.ndarray,
    fs_hz: float,
    low_hz: float,
    high_hz: float,
    order: int = BANDPASS_ORDER,
    zero_phase: bool = True,
) -> np.ndarray:
    """Butterworth band-pass along the last axis of ``data``."""
    if not 0 < low_hz < high_hz < fs_hz / 2:
        raise ArgumentError(
            f"band ({low_hz}, {high_hz}) Hz is invalid at fs={fs_hz} Hz"
        )
    sos = _butter_sos(order, float(low_hz), float(high_hz), float(fs_hz))
    if zero_phase:
        return _sos_zero_phase(sos, np.asarray(data, dtype=np.float64))
    return signal.sosfilt(sos, data, axis=-1)


def filterbank_array(
    data: np.ndarray, fs_hz: float, spec: FilterBankSpec
) -> np.ndarray:
    """Return a stack shaped (n_bands, *data.shape) of band-passed copies."""
    spec.check_rate(fs_hz)
    return np.stack(
        [
            bandpass_array(data, fs_hz, low, high, spec.filter_order, spec.zero_phase)
            for low, high in spec.band_edges
        ]
    )


def filterbank(epochs: EpochSet, spec: FilterBankSpec) -> list[EpochSet]:
    """Decompose every trial into the sub-bands of ``spec``."""
    spec.check_rate(epochs.fs_hz)
    if epochs.n_trials == 0:
        return [epochs for _ in spec.band_edges]
    bands = filterbank_array(epochs.data, epochs.fs_hz, spec)
    return [epochs.with_data(band) for band in bands]


def downsample(epochs: EpochSet, factor: int) -> EpochSet:
    """Low-pass at 0.4 x the new rate, zero-phase, then keep every factor-th sample."""
    if isinstance(factor, bool) or not float(factor).is_integer() or factor < 1:
        raise ArgumentError(f"downsampling factor must be a positive integer: {factor}")
    factor = int(factor)
    if factor == 1:
        return epochs
    if not (epochs.fs_hz / factor).is_integer():
        raise ArgumentError(f"fs={epochs.fs_hz} Hz is not divisible by {factor}")

    new_fs = epochs.fs_hz / factor
    if epochs.n_trials == 0:
        empty = np.zeros((0, epochs.n_channels, math.ceil(epochs.n_samples / factor)))
        return epochs.with_data(empty, fs_hz=new_fs)

    sos = _butter_sos(ANTIALIAS_ORDER, None, ANTIALIAS_FRACTION * new_fs, epochs.fs_hz)
    smoothed = _sos_zero_phase(sos, epochs.data)
    logger.debug("Downsampling %.1f Hz -> %.1f Hz", epochs.fs_hz, new_fs)
    return epochs.with_data(smoothed[..., ::factor], fs_hz=new_fs)


def _check_notch_rate(fs_hz: float, freq_hz: float) -> None:
    if not fs_hz > 2 * freq_hz:
        raise ArgumentError(
            f"a {freq_hz} Hz notch needs fs above {2 * freq_hz} Hz, got {fs_hz}"
        )


def notch_array(
    data: np.ndarray,
    fs_hz: float,
    freq_hz: float = DEFAULT_NOTCH_HZ,
    quality: float = DEFAULT_NOTCH_Q,
) -> np.ndarray:
    _check_notch_rate(fs_hz, freq_hz)
    b, a = signal.iirnotch(freq_hz, quality, fs=fs_hz)
    n = data.shape[-1]
    # about six time constants of the notch resonance
    padlen = min(n - 1, math.ceil(6 * quality / (math.pi * freq_hz) * fs_hz))
    return signal.filtfilt(b, a, data, axis=-1, padtype="odd", padlen=padlen)


def notch_50hz(
    epochs: EpochSet,
    freq_hz: float = DEFAULT_NOTCH_HZ,
    quality: float = DEFAULT_NOTCH_Q,
) -> EpochSet:
    """Second-order IIR notch applied forward and backward."""
    _check_notch_rate(epochs.fs_hz, freq_hz)
    if epochs.n_trials == 0:
        return epochs
    return epochs.with_data(notch_array(epochs.data, epochs.fs_hz, freq_hz, quality))


def frames_to_samples(
    sequence: StimulusSequence,
    fs_hz: float,
    n_samples: int,
    pad_policy: PadPolicy = "zero",
) -> np.ndarray:
    """Zero-order hold of display frames onto an EEG sampling grid.

    Sample k takes the frame shown at t = k / fs. Samples after the last frame
    are zero under ``pad_policy="zero"``.
    """
    if fs_hz < sequence.frame_rate_hz:
        raise ArgumentError(
            f"fs={fs_hz} Hz is below the frame rate {sequence.frame_rate_hz} Hz"
        )
    index = np.floor(
        np.arange(n_samples) * sequence.frame_rate_hz / fs_hz + 1e-9
    ).astype(np.int64)
    past_end = index >= sequence.n_frames
    if past_end.any():
        if pad_policy == "error":
            raise ArgumentError(
                f"{n_samples} samples exceed the {sequence.duration_s:.3f} s stimulus"
            )
        logger.warning(
            "Zero-padding %d samples past the end of stimulus %d",
            int(past_end.sum()),
            sequence.class_id,
        )
    samples = np.zeros(n_samples)
    samples[~past_end] = sequence.frames[index[~past_end]]
    return samples


def codebook_to_samples(
    codebook: Codebook,
    fs_hz: float,
    n_samples: int,
    pad_policy: PadPolicy = "zero",
) -> np.ndarray:
    """Stack :func:`frames_to_samples` for every class, shaped (n_classes, n)."""
    return np.stack(
        [
            frames_to_samples(seq, fs_hz, n_samples, pad_policy)
            for seq in codebook.sequences
        ]
    )
