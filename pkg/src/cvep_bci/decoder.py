"""
Template matching decoder

Trials are spatially filtered, split into the sub-bands of a filter bank and
correlated with every class template at a few sample shifts. The weighted sum
of squared correlations over sub-bands scores each (class, shift) pair and the
best pair decides the class. The same scores drive an asynchronous onset scan
that tests whether the best class stands out from the others.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, Literal

import numpy as np
from joblib import Parallel, delayed
from scipy import stats

from cvep_bci.containers import EpochSet, frozen_array
from cvep_bci.errors import (
    ArgumentError,
    CvepError,
    DegenerateCorrelation,
    FormatError,
    InsufficientClasses,
    InvariantViolation,
)
from cvep_bci.preprocess import FilterBankSpec, filterbank_array
from cvep_bci.stimulus import JfpmSpec
from cvep_bci.tdca import TdcaModel, project

logger = logging.getLogger(__name__)

BANK_FORMAT = "cvep-template-bank"
DEFAULT_FB_WEIGHT_A = 1.25
DEFAULT_FB_WEIGHT_B = 0.25
DEFAULT_N_SHIFTS = 2
ONSET_SHIFT_RANGE_MS = (-100.0, 100.0)

OnsetCorrection = Literal["sidak", "none"]


def filterbank_weights(
    n_bands: int, a: float = DEFAULT_FB_WEIGHT_A, b: float = DEFAULT_FB_WEIGHT_B
) -> np.ndarray:
    """Sub-band weights n^-a + b for n = 1..n_bands."""
    weights = np.arange(1, n_bands + 1, dtype=np.float64) ** -a + b
    if np.any(weights <= 0):
        raise InvariantViolation(f"filter-bank weights must be positive: {weights}")
    return weights


def shift_preference(n_shifts: int) -> np.ndarray:
    """Shifts ordered 0, +1, -1, +2, -2, ... for tie breaking."""
    order = [0]
    for shift in range(1, n_shifts + 1):
        order.extend((shift, -shift))
    return np.array(order, dtype=np.int64)


@dataclass(frozen=True, slots=True, eq=False)
class TemplateBank:
    """Per-class, per-sub-band templates shaped (n_classes, n_bands, n_samples)."""

    templates: np.ndarray
    fs_hz: float
    n_shifts: int
    fb_weights: np.ndarray
    filterbank: FilterBankSpec | None = None
    class_ids: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        templates = frozen_array(self.templates)
        weights = frozen_array(self.fb_weights)
        if templates.ndim != 3 or templates.shape[0] < 1:
            raise InvariantViolation("templates must be (classes, bands, samples)")
        if weights.shape != (templates.shape[1],) or np.any(weights <= 0):
            raise InvariantViolation("need one positive weight per sub-band")
        bands = 1 if self.filterbank is None else self.filterbank.n_bands
        if bands != templates.shape[1]:
            raise InvariantViolation(
                f"{templates.shape[1]} template bands for a {bands}-band filter bank"
            )
        if self.n_shifts < 0:
            raise InvariantViolation("n_shifts must be non-negative")
        class_ids = tuple(int(c) for c in self.class_ids) or tuple(
            range(templates.shape[0])
        )
        if len(class_ids) != templates.shape[0]:
            raise InvariantViolation("one class id per template is required")
        object.__setattr__(self, "templates", templates)
        object.__setattr__(self, "fb_weights", weights)
        object.__setattr__(self, "class_ids", class_ids)

    @classmethod
    def from_waveforms(
        cls,
        waveforms: np.ndarray,
        fs_hz: float,
        filterbank: FilterBankSpec | None = None,
        n_shifts: int = DEFAULT_N_SHIFTS,
        fb_weight_a: float = DEFAULT_FB_WEIGHT_A,
        fb_weight_b: float = DEFAULT_FB_WEIGHT_B,
        class_ids: tuple[int, ...] = (),
    ) -> TemplateBank:
        """Split broadband templates (n_classes, n_samples) into sub-bands."""
        waveforms = np.asarray(waveforms, dtype=np.float64)
        if filterbank is None:
            templates = waveforms[:, None, :]
        else:
            bands = filterbank_array(waveforms, fs_hz, filterbank)
            templates = np.ascontiguousarray(np.moveaxis(bands, 0, 1))
        return cls(
            templates,
            fs_hz,
            n_shifts,
            filterbank_weights(templates.shape[1], fb_weight_a, fb_weight_b),
            filterbank,
            class_ids,
        )

    @property
    def n_classes(self) -> int:
        return int(self.templates.shape[0])

    @property
    def n_bands(self) -> int:
        return int(self.templates.shape[1])

    @property
    def n_samples(self) -> int:
        return int(self.templates.shape[2])

    def subset(self, n_classes: int) -> TemplateBank:
        """Keep the first ``n_classes`` templates."""
        if not 1 <= n_classes <= self.n_classes:
            raise ArgumentError(f"cannot keep {n_classes} of {self.n_classes} classes")
        return TemplateBank(
            self.templates[:n_classes],
            self.fs_hz,
            self.n_shifts,
            self.fb_weights,
            self.filterbank,
            self.class_ids[:n_classes],
        )

    def with_shifts(self, n_shifts: int) -> TemplateBank:
        return TemplateBank(
            self.templates,
            self.fs_hz,
            n_shifts,
            self.fb_weights,
            self.filterbank,
            self.class_ids,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "format": BANK_FORMAT,
            "templates": self.templates.tolist(),
            "fs_hz": self.fs_hz,
            "n_shifts": self.n_shifts,
            "fb_weights": self.fb_weights.tolist(),
            "filterbank": (
                None if self.filterbank is None else self.filterbank.to_dict()
            ),
            "class_ids": list(self.class_ids),
        }

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> TemplateBank:
        if payload.get("format") != BANK_FORMAT:
            raise FormatError(f"not a template bank: {payload.get('format')!r}")
        spec = payload.get("filterbank")
        return cls(
            np.asarray(payload["templates"], dtype=np.float64),
            float(payload["fs_hz"]),
            int(payload["n_shifts"]),
            np.asarray(payload["fb_weights"], dtype=np.float64),
            None if spec is None else FilterBankSpec.from_dict(spec),
            tuple(payload.get("class_ids", ())),
        )


@dataclass(frozen=True, slots=True, eq=False)
class DecodeResult:
    """Outcome of matching one trial.

    ``scores`` is (n_classes, 2 n_shifts + 1) over ``shifts`` = -n..n, and
    ``band_correlations`` holds the signed correlation of the first source
    component per class, band and shift. A positive ``best_shift`` means the
    trial lags the template.
    """

    predicted_class: int
    best_shift: int
    scores: np.ndarray
    band_correlations: np.ndarray
    shifts: np.ndarray

    @property
    def best_score(self) -> float:
        return float(self.scores.max())

    def to_dict(self) -> dict[str, Any]:
        return {
            "predicted_class": self.predicted_class,
            "best_shift": self.best_shift,
            "shifts": self.shifts.tolist(),
            "scores": self.scores.tolist(),
        }


@dataclass(slots=True)
class TrialDecode:
    """Result of decoding one trial of a batch."""

    index: int
    success: bool
    result: DecodeResult | None = None
    error: Exception | None = None

    @property
    def prediction(self) -> int:
        return self.result.predicted_class if self.result is not None else -1


@dataclass(frozen=True, slots=True, eq=False)
class BatchDecodeResult:
    predictions: np.ndarray
    trials: tuple[TrialDecode, ...]
    accuracy: float | None

    @property
    def n_failed(self) -> int:
        return sum(not trial.success for trial in self.trials)


@dataclass(frozen=True, slots=True, eq=False)
class OnsetScan:
    """Type-I error of the best class at every candidate onset shift."""

    shifts_ms: np.ndarray
    type1_error: np.ndarray
    best_scores: np.ndarray
    predicted_classes: np.ndarray
    detected_onset_ms: float
    predicted_class: int

    @property
    def min_error(self) -> float:
        return float(self.type1_error.min())

    def to_dict(self) -> dict[str, Any]:
        return {
            "shifts_ms": self.shifts_ms.tolist(),
            "type1_error": self.type1_error.tolist(),
            "detected_onset_ms": self.detected_onset_ms,
            "predicted_class": self.predicted_class,
        }


def _band_sources(sources: np.ndarray, bank: TemplateBank) -> np.ndarray:
    """Filter sources (components, samples) into (bands, components, samples)."""
    if bank.filterbank is None:
        return sources[None]
    return filterbank_array(sources, bank.fs_hz, bank.filterbank)


def _correlations(
    band_sources: np.ndarray, templates: np.ndarray, shift: int
) -> np.ndarray:
    """Pearson correlation (classes, bands, components) at one shift.

    The trial sample t is compared with the template sample t - shift over
    the samples where both exist.
    """
    n_trial, n_template = band_sources.shape[-1], templates.shape[-1]
    start = max(0, shift)
    stop = min(n_trial, n_template + shift)
    if stop - start < 2:
        raise ArgumentError(f"shift {shift} leaves fewer than two overlapping samples")

    x = band_sources[..., start:stop]
    y = templates[..., start - shift : stop - shift]
    n = stop - start
    x = x - x.mean(axis=-1, keepdims=True)
    x_norm = np.sqrt(np.einsum("bct,bct->bc", x, x))
    y_sum = y.sum(axis=-1)
    y_norm = np.sqrt(np.maximum(np.einsum("kbt,kbt->kb", y, y) - y_sum**2 / n, 0.0))
    if np.any(x_norm == 0):
        raise DegenerateCorrelation("trial has zero variance in a sub-band")
    if np.any(y_norm == 0):
        raise DegenerateCorrelation("a template has zero variance in a sub-band")

    # sum((x - mean x) * y) equals the centered cross product
    cross = np.einsum("bct,kbt->kbc", x, y)
    return cross / (y_norm[:, :, None] * x_norm[None, :, :])


def score_band_sources(
    band_sources: np.ndarray, bank: TemplateBank
) -> tuple[np.ndarray, np.ndarray]:
    """Return (scores, first-component correlations) over shifts -n..n."""
    shifts = np.arange(-bank.n_shifts, bank.n_shifts + 1)
    scores = np.empty((bank.n_classes, shifts.size))
    band_rho = np.empty((bank.n_classes, bank.n_bands, shifts.size))
    for column, shift in enumerate(shifts):
        rho = _correlations(band_sources, bank.templates, int(shift))
        scores[:, column] = np.einsum("b,kbc->k", bank.fb_weights, rho**2)
        band_rho[:, :, column] = rho[:, :, 0]
    return scores, band_rho


def _decide(scores: np.ndarray, n_shifts: int) -> tuple[int, int]:
    preference = shift_preference(n_shifts)
    ordered = scores[:, preference + n_shifts]
    best_class = int(np.argmax(ordered.max(axis=1)))
    best_shift = int(preference[int(np.argmax(ordered[best_class]))])
    return best_class, best_shift


def match_sources(sources: np.ndarray, bank: TemplateBank) -> DecodeResult:
    """Match already spatially filtered sources (components, samples)."""
    sources = np.atleast_2d(np.asarray(sources, dtype=np.float64))
    if sources.shape[-1] < bank.n_samples - bank.n_shifts:
        raise ArgumentError(
            f"trial of {sources.shape[-1]} samples is shorter than the "
            f"{bank.n_samples}-sample templates minus {bank.n_shifts} shifts"
        )
    scores, band_rho = score_band_sources(_band_sources(sources, bank), bank)
    best_class, best_shift = _decide(scores, bank.n_shifts)
    return DecodeResult(
        bank.class_ids[best_class],
        best_shift,
        scores,
        band_rho,
        np.arange(-bank.n_shifts, bank.n_shifts + 1),
    )


def match(
    trial: EpochSet | np.ndarray, model: TdcaModel, bank: TemplateBank
) -> DecodeResult:
    """Decode one trial given as a one-trial EpochSet or a (channels, samples) array."""
    if isinstance(trial, EpochSet):
        if trial.n_trials != 1:
            raise ArgumentError(f"match takes one trial, got {trial.n_trials}")
        if trial.fs_hz != bank.fs_hz:
            raise ArgumentError(f"trial at {trial.fs_hz} Hz, bank at {bank.fs_hz} Hz")
        data = trial.data[0]
    else:
        data = np.asarray(trial, dtype=np.float64)
    return match_sources(project(data, model), bank)


def _decode_trial(
    index: int, data: np.ndarray, model: TdcaModel, bank: TemplateBank
) -> TrialDecode:
    try:
        return TrialDecode(index, True, match(data, model, bank))
    except CvepError as exc:
        logger.warning("Trial %d could not be decoded: %s", index, exc)
        return TrialDecode(index, False, error=exc)


def batch_decode(
    epochs: EpochSet,
    model: TdcaModel,
    bank: TemplateBank,
    n_jobs: int = 1,
    labeled: bool = True,
) -> BatchDecodeResult:
    """Decode every trial; failed trials are flagged, never fatal.

    Failed trials predict -1 and count as errors in the accuracy.
    """
    if epochs.fs_hz != bank.fs_hz:
        raise ArgumentError(f"epochs at {epochs.fs_hz} Hz, bank at {bank.fs_hz} Hz")
    trials = tuple(
        Parallel(n_jobs=n_jobs)(
            delayed(_decode_trial)(index, epochs.data[index], model, bank)
            for index in range(epochs.n_trials)
        )
    )
    predictions = np.array([trial.prediction for trial in trials], dtype=np.int64)
    accuracy = None
    if labeled and epochs.n_trials:
        accuracy = float(np.mean(predictions == epochs.labels))
        logger.info(
            "Decoded %d trials, accuracy %.4f", epochs.n_trials, accuracy
        )
    return BatchDecodeResult(predictions, trials, accuracy)


def type1_error(
    scores: np.ndarray, correction: OnsetCorrection = "sidak", n_tests: int = 1
) -> float:
    """One-sided p-value of the largest score against the others.

    A t distribution with n - 2 degrees of freedom is fitted to the mean and
    standard deviation of the other n - 1 scores. With ``sidak`` the value
    is corrected for picking the maximum of n scores across ``n_tests`` scans.
    Scores should be roughly normal under the null; ``onset_scan`` passes the
    cube root of the weighted squared correlations.

    The defaults therefore do not give the plain p-value of the best score.
    For that, pass the raw scores with ``correction="none"``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size < 3:
        raise InsufficientClasses(f"need at least three classes, got {scores.size}")
    best = int(np.argmax(scores))
    others = np.delete(scores, best)
    mean, sd = float(others.mean()), float(others.std(ddof=1))
    # scores equal up to rounding
    spread = 16 * np.finfo(np.float64).eps * float(np.abs(scores).max())
    if sd <= spread:
        p_value = 1.0 if scores[best] - mean <= spread else 0.0
    else:
        p_value = float(stats.t.sf(scores[best], scores.size - 2, loc=mean, scale=sd))
    if correction == "none" or p_value >= 1.0:
        return p_value
    n_comparisons = scores.size * n_tests
    return float(-np.expm1(n_comparisons * np.log1p(-p_value)))


def onset_scan(
    sources: np.ndarray,
    bank: TemplateBank,
    onset_sample: int,
    shift_range_ms: tuple[float, float] = ONSET_SHIFT_RANGE_MS,
    correction: OnsetCorrection = "sidak",
) -> OnsetScan:
    """Scan candidate stimulus onsets around ``onset_sample`` of a recording.

    Args:
        sources: Spatially filtered continuous signal, (samples,) or
            (components, samples).
        bank: Templates; the window at each candidate onset has their length.
        onset_sample: Nominal onset in samples, the 0 ms point of the scan.
        shift_range_ms: Earliest and latest candidate shift.
        correction: ``sidak`` corrects for the classes and every scanned
            shift; ``none`` reports the uncorrected p-value. Both test the
            cube root of the score, not the score itself.

    Returns:
        The error curve, the shift minimizing it (ties toward 0 ms, later
        shifts first) and the class decoded at that shift.
    """
    if bank.n_classes < 3:
        raise InsufficientClasses(f"need at least three classes, got {bank.n_classes}")
    sources = np.atleast_2d(np.asarray(sources, dtype=np.float64))
    first = math.ceil(shift_range_ms[0] * bank.fs_hz / 1000 - 1e-9)
    last = math.floor(shift_range_ms[1] * bank.fs_hz / 1000 + 1e-9)
    needed = onset_sample + last + bank.n_samples
    if onset_sample + first < 0 or needed > sources.shape[-1]:
        raise ArgumentError(
            "recording does not cover the template plus the scan range"
        )

    band_sources = _band_sources(sources, bank)
    shifts = np.arange(first, last + 1)
    errors = np.empty(shifts.size)
    best_scores = np.empty(shifts.size)
    classes = np.empty(shifts.size, dtype=np.int64)
    for index, shift in enumerate(shifts):
        start = onset_sample + int(shift)
        window = band_sources[..., start : start + bank.n_samples]
        rho = _correlations(window, bank.templates, 0)
        # chi-square-like scores; the cube root is close to normal
        scores = np.cbrt(np.einsum("b,kbc->k", bank.fb_weights, rho**2))
        errors[index] = type1_error(scores, correction, shifts.size)
        best_scores[index] = scores.max()
        classes[index] = bank.class_ids[int(np.argmax(scores))]

    preference = np.argsort(np.abs(shifts) * 2 - (shifts > 0), kind="stable")
    winner = int(preference[int(np.argmin(errors[preference]))])
    shifts_ms = shifts * 1000.0 / bank.fs_hz
    logger.info(
        "Onset scan: min error %.3g at %.1f ms", errors[winner], shifts_ms[winner]
    )
    return OnsetScan(
        shifts_ms,
        errors,
        best_scores,
        classes,
        float(shifts_ms[winner]),
        int(classes[winner]),
    )


def sine_templates(
    spec: JfpmSpec,
    fs_hz: float,
    duration_s: float,
    n_harmonics: int = 1,
    filterbank: FilterBankSpec | None = None,
    n_shifts: int = DEFAULT_N_SHIFTS,
    fb_weight_a: float = DEFAULT_FB_WEIGHT_A,
    fb_weight_b: float = DEFAULT_FB_WEIGHT_B,
) -> TemplateBank:
    """Reference templates summing sin(2 pi h f t + h phi) over h harmonics."""
    if n_harmonics < 1:
        raise ArgumentError("n_harmonics must be at least 1")
    t = np.arange(round(duration_s * fs_hz)) / fs_hz
    freqs, phases = spec.frequencies(), spec.phases()
    waveforms = sum(
        np.sin(2 * np.pi * h * freqs[:, None] * t[None, :] + h * phases[:, None])
        for h in range(1, n_harmonics + 1)
    )
    return TemplateBank.from_waveforms(
        waveforms, fs_hz, filterbank, n_shifts, fb_weight_a, fb_weight_b
    )
