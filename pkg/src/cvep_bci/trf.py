"""
Temporal response functions

The source response to a stimulus is modeled as the convolution of the
stimulus with an impulse response h over a fixed lag window. h is estimated
by least squares on a lagged stimulus design, with the inverse of the design
covariance truncated to its leading eigen-directions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np
from scipy import signal

from cvep_bci.containers import (
    TRUNCATION_RULES,
    Codebook,
    EpochSet,
    StimulusSequence,
    TruncationRule,
    frozen_array,
)
from cvep_bci.decoder import TemplateBank
from cvep_bci.errors import ArgumentError, InvariantViolation, ZeroDesign
from cvep_bci.preprocess import (
    FilterBankSpec,
    bandpass_array,
    codebook_to_samples,
    frames_to_samples,
)

logger = logging.getLogger(__name__)

TRF_FORMAT = "cvep-trf"
DEFAULT_TAU_MIN_S = 0.0
DEFAULT_TAU_MAX_S = 0.5
DEFAULT_ALPHA = 0.9
SSVEP_BAND_HZ = (8.0, 15.8)


def n_lags(tau_min_s: float, tau_max_s: float, fs_hz: float) -> int:
    """Number of taps covering [tau_min, tau_max] at ``fs_hz``."""
    return round((tau_max_s - tau_min_s) * fs_hz) + 1


@dataclass(frozen=True, slots=True, eq=False)
class Trf:
    """Impulse response taps over a lag window, with fit metadata."""

    taps: np.ndarray
    tau_min_s: float
    tau_max_s: float
    fs_hz: float
    retained_rank: int | None = None
    alpha: float | None = None
    eigen_spectrum: np.ndarray | None = None

    def __post_init__(self) -> None:
        taps = frozen_array(self.taps)
        if taps.ndim != 1:
            raise InvariantViolation("taps must be a vector")
        if not self.tau_min_s < self.tau_max_s or not self.fs_hz > 0:
            raise InvariantViolation("need tau_min < tau_max and fs > 0")
        expected = n_lags(self.tau_min_s, self.tau_max_s, self.fs_hz)
        if taps.size != expected:
            raise InvariantViolation(f"{taps.size} taps for a {expected}-lag window")
        if self.retained_rank is not None and not 1 <= self.retained_rank <= expected:
            raise InvariantViolation(f"retained rank {self.retained_rank} out of range")
        object.__setattr__(self, "taps", taps)
        if self.eigen_spectrum is not None:
            spectrum = frozen_array(self.eigen_spectrum)
            if np.any(spectrum < 0) or np.any(np.diff(spectrum) > 0):
                raise InvariantViolation("eigen spectrum must be non-increasing, >= 0")
            object.__setattr__(self, "eigen_spectrum", spectrum)

    @property
    def n_lags(self) -> int:
        return int(self.taps.size)

    @property
    def lag_offset(self) -> int:
        """Lag of the first tap in samples."""
        return round(self.tau_min_s * self.fs_hz)

    @property
    def lags_s(self) -> np.ndarray:
        return (self.lag_offset + np.arange(self.n_lags)) / self.fs_hz

    def to_dict(self) -> dict[str, Any]:
        return {
            "format": TRF_FORMAT,
            "taps": self.taps.tolist(),
            "tau_min_s": self.tau_min_s,
            "tau_max_s": self.tau_max_s,
            "fs_hz": self.fs_hz,
            "retained_rank": self.retained_rank,
            "alpha": self.alpha,
            "eigen_spectrum": (
                None if self.eigen_spectrum is None else self.eigen_spectrum.tolist()
            ),
        }

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> Trf:
        if payload.get("format") != TRF_FORMAT:
            raise InvariantViolation(f"not a TRF document: {payload.get('format')!r}")
        spectrum = payload.get("eigen_spectrum")
        return cls(
            np.asarray(payload["taps"], dtype=np.float64),
            float(payload["tau_min_s"]),
            float(payload["tau_max_s"]),
            float(payload["fs_hz"]),
            payload.get("retained_rank"),
            payload.get("alpha"),
            None if spectrum is None else np.asarray(spectrum),
        )


@dataclass(frozen=True, slots=True, eq=False)
class LaggedDesign:
    """Concatenated per-class lag matrices, one row per sample."""

    matrix: np.ndarray
    n_classes: int
    n_samples_per_class: int
    fs_hz: float
    tau_min_s: float = DEFAULT_TAU_MIN_S
    tau_max_s: float = DEFAULT_TAU_MAX_S

    @property
    def n_lags(self) -> int:
        return int(self.matrix.shape[1])

    @property
    def lag_offset(self) -> int:
        return round(self.tau_min_s * self.fs_hz)


def lag_matrix(stimulus: np.ndarray, n_taps: int, lag_offset: int = 0) -> np.ndarray:
    """Matrix whose column j holds ``stimulus`` delayed by lag_offset + j samples.

    Samples shifted in from outside the stimulus are zero.
    """
    n = stimulus.size
    matrix = np.zeros((n, n_taps))
    for column in range(n_taps):
        delay = lag_offset + column
        if delay >= 0:
            matrix[delay:, column] = stimulus[: max(n - delay, 0)]
        else:
            matrix[: n + delay, column] = stimulus[-delay:]
    return matrix


def stimulus_waveform(
    sequence: StimulusSequence, fs_hz: float, n_samples: int, center: bool = True
) -> np.ndarray:
    """Stimulus held at the EEG rate, optionally minus the mean frame value."""
    waveform = frames_to_samples(sequence, fs_hz, n_samples)
    if center:
        held = _held_samples(sequence, fs_hz, n_samples)
        waveform[:held] -= sequence.frames.mean()
    return waveform


def _held_samples(sequence: StimulusSequence, fs_hz: float, n_samples: int) -> int:
    return min(n_samples, int(np.ceil(sequence.duration_s * fs_hz - 1e-9)))


def codebook_waveforms(
    codebook: Codebook, fs_hz: float, n_samples: int, center: bool = True
) -> np.ndarray:
    """Stimulus waveforms of every class, shaped (n_classes, n_samples)."""
    waveforms = codebook_to_samples(codebook, fs_hz, n_samples)
    if center:
        held = _held_samples(codebook.sequences[0], fs_hz, n_samples)
        means = codebook.frame_matrix().mean(axis=1)
        waveforms[:, :held] -= means[:, None]
    return waveforms


def build_design(
    codebook: Codebook,
    fs_hz: float,
    n_samples_per_class: int,
    tau_min_s: float = DEFAULT_TAU_MIN_S,
    tau_max_s: float = DEFAULT_TAU_MAX_S,
    center: bool = True,
) -> LaggedDesign:
    """Stack the lag matrices of every class in codebook order."""
    taps = n_lags(tau_min_s, tau_max_s, fs_hz)
    if taps > n_samples_per_class:
        raise ArgumentError(
            f"{taps} lags exceed the {n_samples_per_class} samples per class"
        )
    offset = round(tau_min_s * fs_hz)
    waveforms = codebook_waveforms(codebook, fs_hz, n_samples_per_class, center)
    blocks = [lag_matrix(waveform, taps, offset) for waveform in waveforms]
    return LaggedDesign(
        np.vstack(blocks),
        len(codebook),
        n_samples_per_class,
        fs_hz,
        tau_min_s,
        tau_max_s,
    )


def truncation_rank(
    eigenvalues: np.ndarray,
    alpha: float,
    rule: TruncationRule = "below_alpha",
) -> int:
    """Number of leading eigen-directions kept for a variance fraction ``alpha``.

    ``below_alpha`` keeps the largest m whose cumulative fraction stays strictly
    below alpha; ``reach_alpha`` keeps the smallest m that reaches it. Both keep
    at least one direction, and alpha = 1 keeps every positive eigenvalue.
    """
    if not 0.0 < alpha <= 1.0:
        raise ArgumentError(f"alpha must lie in (0, 1]: {alpha}")
    if rule not in TRUNCATION_RULES:
        raise ArgumentError(f"unknown truncation rule: {rule}")
    spectrum = np.sort(np.asarray(eigenvalues, dtype=np.float64))[::-1]
    spectrum = np.clip(spectrum, 0, None)
    total = spectrum.sum()
    if not total > 0:
        raise ZeroDesign("design covariance has no positive eigenvalue")

    tolerance = spectrum[0] * spectrum.size * np.finfo(np.float64).eps
    n_positive = int(np.count_nonzero(spectrum > tolerance))
    if alpha == 1.0:
        return n_positive

    below = int(np.count_nonzero(np.cumsum(spectrum) / total < alpha))
    rank = below if rule == "below_alpha" else below + 1
    return max(1, min(rank, n_positive))


def fit_trf(
    design: LaggedDesign,
    response: np.ndarray,
    alpha: float = DEFAULT_ALPHA,
    rule: TruncationRule = "below_alpha",
) -> Trf:
    """Least-squares TRF with an eigen-truncated design covariance inverse.

    Args:
        design: Lagged stimulus design for the concatenated classes.
        response: Source response concatenated in the same class order.
        alpha: Cumulative eigenvalue fraction that sets the retained rank.
        rule: ``below_alpha`` or ``reach_alpha``.
    """
    matrix = design.matrix
    response = np.asarray(response, dtype=np.float64)
    if response.shape != (matrix.shape[0],):
        raise ArgumentError(
            f"response has shape {response.shape}, design has {matrix.shape[0]} rows"
        )
    if not np.any(matrix):
        raise ZeroDesign("the lagged stimulus design is all zeros")

    eigenvalues, eigenvectors = np.linalg.eigh(matrix.T @ matrix)
    eigenvalues, eigenvectors = eigenvalues[::-1], eigenvectors[:, ::-1]
    rank = truncation_rank(eigenvalues, alpha, rule)

    kept = eigenvectors[:, :rank]
    taps = kept @ ((kept.T @ (matrix.T @ response)) / eigenvalues[:rank])
    logger.debug("Fitted TRF: %d taps, retained rank %d", taps.size, rank)

    return Trf(
        taps,
        design.tau_min_s,
        design.tau_max_s,
        design.fs_hz,
        rank,
        alpha,
        np.clip(eigenvalues, 0, None),
    )


def class_mean_response(
    sources: EpochSet, component: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Concatenate the class-mean time courses of one source component."""
    classes, means = sources.class_means()
    return means[:, component, :].reshape(-1), classes


def fit_trf_from_epochs(
    sources: EpochSet,
    codebook: Codebook,
    tau_min_s: float = DEFAULT_TAU_MIN_S,
    tau_max_s: float = DEFAULT_TAU_MAX_S,
    alpha: float = DEFAULT_ALPHA,
    rule: TruncationRule = "below_alpha",
    component: int = 0,
) -> Trf:
    """Fit a TRF to spatially filtered calibration epochs.

    Labels of ``sources`` index into ``codebook``; the class-mean response of
    ``component`` is regressed on the lagged codes of the classes present.
    """
    response, classes = class_mean_response(sources, component)
    if classes.max() >= len(codebook):
        raise ArgumentError(
            f"label {int(classes.max())} is not in a {len(codebook)}-code codebook"
        )
    design = build_design(
        codebook.subset(classes.tolist()),
        sources.fs_hz,
        sources.n_samples,
        tau_min_s,
        tau_max_s,
    )
    return fit_trf(design, response, alpha, rule)


def reconstruct_responses(
    trf: Trf,
    waveforms: np.ndarray,
    n_samples: int,
) -> np.ndarray:
    """Convolve stimulus waveforms (..., n) with the TRF, zero initial history."""
    full = signal.fftconvolve(
        waveforms, trf.taps.reshape((1,) * (waveforms.ndim - 1) + (-1,)), axes=-1
    )
    out = np.zeros(waveforms.shape[:-1] + (n_samples,))
    start = trf.lag_offset
    # out[t] = full[t - start]
    first = max(start, 0)
    last = min(n_samples, full.shape[-1] + start)
    if last > first:
        out[..., first:last] = full[..., first - start : last - start]
    return out


def reconstruct_response(
    trf: Trf,
    sequence: StimulusSequence,
    fs_hz: float,
    n_samples: int,
    center: bool = False,
) -> np.ndarray:
    """Predicted source response r(t) = sum_tau h(tau) s(t - tau)."""
    _check_rate(trf, fs_hz)
    waveform = stimulus_waveform(sequence, fs_hz, n_samples, center)
    return reconstruct_responses(trf, waveform, n_samples)


def _check_rate(trf: Trf, fs_hz: float) -> None:
    if trf.fs_hz != fs_hz:
        raise ArgumentError(f"TRF is sampled at {trf.fs_hz} Hz, not {fs_hz} Hz")


def build_linear_templates(
    trf: Trf,
    codebook: Codebook,
    fs_hz: float,
    duration_s: float,
    filterbank: FilterBankSpec | None = None,
    n_shifts: int = 2,
    fb_weight_a: float = 1.25,
    fb_weight_b: float = 0.25,
) -> TemplateBank:
    """Templates predicted by convolving every code with the TRF."""
    _check_rate(trf, fs_hz)
    n_samples = round(duration_s * fs_hz)
    waveforms = codebook_waveforms(codebook, fs_hz, n_samples)
    responses = reconstruct_responses(trf, waveforms, n_samples)
    logger.debug("Built %d linear templates of %d samples", len(codebook), n_samples)
    return TemplateBank.from_waveforms(
        responses, fs_hz, filterbank, n_shifts, fb_weight_a, fb_weight_b
    )


def reconstruct_ssvep_templates(
    trf: Trf,
    codebook: Codebook,
    fs_hz: float,
    duration_s: float,
    band: tuple[float, float] = SSVEP_BAND_HZ,
    filterbank: FilterBankSpec | None = None,
    n_shifts: int = 2,
    fb_weight_a: float = 1.25,
    fb_weight_b: float = 0.25,
) -> TemplateBank:
    """SSVEP templates from a WN-calibrated TRF restricted to the JFPM band."""
    _check_rate(trf, fs_hz)
    narrow = Trf(
        bandpass_array(trf.taps, fs_hz, band[0], band[1]),
        trf.tau_min_s,
        trf.tau_max_s,
        trf.fs_hz,
    )
    return build_linear_templates(
        narrow,
        codebook,
        fs_hz,
        duration_s,
        filterbank,
        n_shifts,
        fb_weight_a,
        fb_weight_b,
    )


def average_trf(trfs: Sequence[Trf]) -> Trf:
    """Tap-wise mean of TRFs sharing one lag window and rate."""
    if not trfs:
        raise ArgumentError("cannot average an empty list of TRFs")
    first = trfs[0]
    for trf in trfs[1:]:
        if (trf.n_lags, trf.fs_hz, trf.lag_offset) != (
            first.n_lags,
            first.fs_hz,
            first.lag_offset,
        ):
            raise ArgumentError("TRFs differ in lag window or sampling rate")
    taps = np.mean([trf.taps for trf in trfs], axis=0)
    return Trf(taps, first.tau_min_s, first.tau_max_s, first.fs_hz)
