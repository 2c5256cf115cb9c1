"""
Performance metrics

Information transfer rate, spectral SNR and mutual information of averaged
responses, confusion matrices and the large-target decoding sweep.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np
from scipy import integrate, signal, special

from cvep_bci.containers import Codebook, EpochSet, frozen_array
from cvep_bci.decoder import (
    DEFAULT_FB_WEIGHT_A,
    DEFAULT_FB_WEIGHT_B,
    DEFAULT_N_SHIFTS,
    batch_decode,
)
from cvep_bci.errors import ArgumentError, InvariantViolation, NoNoiseEstimate
from cvep_bci.preprocess import FilterBankSpec
from cvep_bci.tdca import TdcaModel
from cvep_bci.trf import Trf, build_linear_templates

logger = logging.getLogger(__name__)

DEFAULT_GAZE_SHIFT_S = 0.5
DEFAULT_MI_UPPER_HZ = 125.0
LARGE_TARGET_COUNTS = (40, 100, 200, 500, 1000, 2000, 5000, 10000)


@dataclass(frozen=True, slots=True)
class ItrInput:
    """Target count, accuracy and selection time of a speller run."""

    n_targets: int
    accuracy: float
    selection_time_s: float

    def __post_init__(self) -> None:
        if self.n_targets < 2:
            raise ArgumentError(f"need at least two targets, got {self.n_targets}")
        if not 0.0 <= self.accuracy <= 1.0:
            raise ArgumentError(f"accuracy must lie in [0, 1]: {self.accuracy}")
        if not self.selection_time_s > 0:
            raise ArgumentError("selection time must be positive")


def selection_time_s(
    stimulus_s: float, gaze_shift_s: float = DEFAULT_GAZE_SHIFT_S
) -> float:
    """Time per selection: stimulation plus the gaze shift to the next target."""
    return stimulus_s + gaze_shift_s


def bits_per_selection(n_targets: int, accuracy: float) -> float:
    """Wolpaw bits per selection with 0 log 0 = 0."""
    m, p = n_targets, accuracy
    bits = (
        math.log2(m)
        + special.xlogy(p, p) / math.log(2)
        + special.xlogy(1 - p, (1 - p) / (m - 1)) / math.log(2)
    )
    return float(bits)


def itr(params: ItrInput) -> float:
    """Information transfer rate in bits per minute."""
    bits = bits_per_selection(params.n_targets, params.accuracy)
    return bits * 60.0 / params.selection_time_s


def itr_bpm(n_targets: int, accuracy: float, selection_time: float) -> float:
    return itr(ItrInput(n_targets, accuracy, selection_time))


@dataclass(frozen=True, slots=True, eq=False)
class SnrReport:
    """Signal and noise power spectra of a class-averaged response.

    ``snr`` is +inf where the noise spectrum vanishes under a non-zero signal.
    """

    freqs_hz: np.ndarray
    snr: np.ndarray
    signal_psd: np.ndarray
    noise_psd: np.ndarray
    mutual_info_bits_per_s: float
    upper_hz: float

    def __post_init__(self) -> None:
        arrays = [frozen_array(getattr(self, name)) for name in _SPECTRA]
        if len({array.shape for array in arrays}) != 1 or arrays[0].ndim != 1:
            raise InvariantViolation("spectra must be vectors on one frequency grid")
        if np.any(arrays[1] < 0) or not self.mutual_info_bits_per_s >= 0:
            raise InvariantViolation("SNR and mutual information must be >= 0")
        for name, array in zip(_SPECTRA, arrays):
            object.__setattr__(self, name, array)

    def to_dict(self) -> dict[str, Any]:
        return {
            "freqs_hz": self.freqs_hz.tolist(),
            "snr": [_json_float(value) for value in self.snr],
            "mutual_info_bits_per_s": _json_float(self.mutual_info_bits_per_s),
            "upper_hz": self.upper_hz,
        }


_SPECTRA = ("freqs_hz", "snr", "signal_psd", "noise_psd")


def _json_float(value: float) -> float | str:
    return float(value) if math.isfinite(value) else "inf"


def snr_spectrum(
    trials: EpochSet, component: int = 0, upper_hz: float | None = None
) -> SnrReport:
    """SNR of the trial average against the residuals of the single trials.

    Spectra are one-sided periodograms of the mean-removed signals with a
    rectangular window, scaled so that summing them times the bin width gives
    the time-domain power. The noise spectrum sums the residual spectra of all
    trials.
    """
    if trials.n_trials < 2:
        raise NoNoiseEstimate(f"need at least two trials, got {trials.n_trials}")
    if trials.classes.size != 1:
        raise ArgumentError("SNR is computed for the trials of a single class")
    x = trials.data[:, component, :]
    mean = x.mean(axis=0)
    residuals = x - mean
    if np.abs(residuals).max() <= 8 * np.finfo(np.float64).eps * np.abs(x).max():
        residuals = np.zeros_like(residuals)

    freqs, signal_psd = signal.periodogram(mean, trials.fs_hz, window="boxcar")
    _, noise_psd = signal.periodogram(residuals, trials.fs_hz, window="boxcar", axis=-1)
    noise_psd = noise_psd.sum(axis=0)

    snr = np.zeros_like(signal_psd)
    silent = noise_psd == 0
    np.divide(signal_psd, noise_psd, out=snr, where=~silent)
    snr[silent & (signal_psd > 0)] = np.inf
    if np.isinf(snr).any():
        logger.warning("Noise spectrum vanishes; SNR reported as infinite")

    upper = min(DEFAULT_MI_UPPER_HZ, trials.fs_hz / 2) if upper_hz is None else upper_hz
    info = _log_snr_integral(freqs, snr, upper)
    return SnrReport(freqs, snr, signal_psd, noise_psd, info, upper)


def mutual_information(report: SnrReport, k_hz: float) -> float:
    """Integral of log2(1 + SNR(f)) over [0, k_hz] in bits per second.

    The integrand is linearly interpolated at ``k_hz`` when it falls between
    grid points.
    """
    return _log_snr_integral(report.freqs_hz, report.snr, k_hz)


def _log_snr_integral(freqs: np.ndarray, snr: np.ndarray, k_hz: float) -> float:
    if not 0 <= k_hz <= freqs[-1] + 1e-9:
        raise ArgumentError(f"upper limit {k_hz} Hz outside [0, {freqs[-1]}] Hz")
    # grid points below k plus the first one at or above it
    stop = min(int(np.searchsorted(freqs, k_hz, side="left")) + 1, freqs.size)
    if np.isinf(snr[:stop]).any():
        logger.warning(
            "Infinite SNR below %.1f Hz; mutual information is infinite", k_hz
        )
        return math.inf
    density = np.log2(1.0 + snr[:stop])
    grid = freqs[:stop]
    if grid[-1] > k_hz:
        values = np.append(density[:-1], np.interp(k_hz, grid, density))
        grid = np.append(grid[:-1], k_hz)
    else:
        values = density
    return float(integrate.trapezoid(values, grid))


def confusion_and_accuracy(
    labels: Sequence[int] | np.ndarray,
    predictions: Sequence[int] | np.ndarray,
    n_classes: int | None = None,
    normalize: bool = False,
) -> tuple[np.ndarray, float]:
    """Confusion matrix (rows true, columns predicted) and accuracy.

    Failed trials (prediction -1) count as errors and are left out of the matrix.
    """
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    if labels.size == 0:
        raise ArgumentError("no trials to evaluate")
    if labels.shape != predictions.shape:
        raise ArgumentError(
            f"{labels.size} labels but {predictions.size} predictions"
        )
    size = n_classes or int(max(labels.max(), predictions.max())) + 1
    valid = predictions >= 0
    matrix = np.zeros((size, size))
    np.add.at(matrix, (labels[valid], predictions[valid]), 1.0)
    if normalize:
        totals = np.bincount(labels, minlength=size).astype(np.float64)
        matrix = np.divide(
            matrix,
            totals[:, None],
            out=np.zeros_like(matrix),
            where=totals[:, None] > 0,
        )
    return matrix, float(np.mean(labels == predictions))


@dataclass(frozen=True, slots=True)
class Performance:
    accuracy: float
    itr_bpm: float

    def to_dict(self) -> dict[str, float]:
        return {"accuracy": self.accuracy, "itr_bpm": self.itr_bpm}


@dataclass(frozen=True, slots=True)
class SweepPoint:
    n_templates: int
    accuracy: float
    itr_bpm: float


def large_target_sweep(
    sources: EpochSet,
    trf: Trf,
    pool: Codebook,
    true_indices: Sequence[int],
    n_list: Sequence[int] = LARGE_TARGET_COUNTS,
    filterbank: FilterBankSpec | None = None,
    n_shifts: int = DEFAULT_N_SHIFTS,
    gaze_shift_s: float = DEFAULT_GAZE_SHIFT_S,
    n_jobs: int = 1,
    fb_weight_a: float = DEFAULT_FB_WEIGHT_A,
    fb_weight_b: float = DEFAULT_FB_WEIGHT_B,
) -> list[SweepPoint]:
    """Decode the same trials against growing prefixes of a code pool.

    Args:
        sources: Spatially filtered test trials; label k was evoked by pool
            code ``true_indices[k]``.
        trf: TRF used to predict a template for every pool code.
        pool: Code pool; its first n codes form the n-class template bank.
        true_indices: Pool index of every presented code.
        n_list: Template counts to evaluate.

    Returns:
        One point per n with the accuracy and the ITR at M = n.
    """
    true_indices = np.asarray(true_indices, dtype=np.int64)
    n_list = sorted(int(n) for n in n_list)
    if not n_list or n_list[-1] > len(pool):
        raise ArgumentError(
            f"template counts {n_list} exceed the {len(pool)}-code pool"
        )
    if sources.labels.size and sources.labels.max() >= true_indices.size:
        raise ArgumentError("a trial label has no pool index")
    if true_indices.max() >= n_list[0]:
        raise ArgumentError(
            f"presented codes must lie in the first {n_list[0]} pool codes"
        )

    largest = pool.subset(list(range(n_list[-1])))
    bank = build_linear_templates(
        trf,
        largest,
        sources.fs_hz,
        sources.duration_s,
        filterbank,
        n_shifts,
        fb_weight_a,
        fb_weight_b,
    )
    identity = TdcaModel.identity(sources.n_channels)
    truth = true_indices[sources.labels]
    points = []
    for n in n_list:
        result = batch_decode(sources, identity, bank.subset(n), n_jobs, labeled=False)
        accuracy = float(np.mean(result.predictions == truth))
        rate = itr_bpm(n, accuracy, selection_time_s(sources.duration_s, gaze_shift_s))
        logger.info("%d templates: accuracy %.4f, ITR %.2f bpm", n, accuracy, rate)
        points.append(SweepPoint(n, accuracy, rate))
    return points


def format_performance_table(
    rows: Mapping[str, Mapping[str, Performance]],
    title: str = "",
    row_label: str = "Subject",
    summary: bool = True,
) -> str:
    """Plain-text table of accuracy (%) and ITR (bpm) per row and method.

    With ``summary`` a final row gives the mean and standard deviation of
    every column.
    """
    methods: list[str] = []
    for cells in rows.values():
        methods.extend(method for method in cells if method not in methods)
    width = max([len(row_label), len("Mean")] + [len(name) for name in rows])

    header = f"{row_label:<{width}}"
    for method in methods:
        header += f" | {method + ' Acc (%)':>18} | {method + ' ITR (bpm)':>18}"
    lines = [title] if title else []
    lines.extend([header, "-" * len(header)])

    def row_text(label: str, cells: list[tuple[str, str]]) -> str:
        text = f"{label:<{width}}"
        for acc, rate in cells:
            text += f" | {acc:>18} | {rate:>18}"
        return text

    for subject, cells in rows.items():
        lines.append(
            row_text(
                subject,
                [
                    (
                        f"{100 * cells[m].accuracy:.2f}" if m in cells else "-",
                        f"{cells[m].itr_bpm:.2f}" if m in cells else "-",
                    )
                    for m in methods
                ],
            )
        )

    if not summary or not rows:
        return "\n".join(lines) + "\n"

    totals = []
    for method in methods:
        acc = np.array([c[method].accuracy for c in rows.values() if method in c])
        rate = np.array([c[method].itr_bpm for c in rows.values() if method in c])
        totals.append(
            (
                f"{100 * acc.mean():.2f} ± {100 * acc.std():.2f}",
                f"{rate.mean():.2f} ± {rate.std():.2f}",
            )
        )
    lines.append(row_text("Mean", totals))
    return "\n".join(lines) + "\n"
