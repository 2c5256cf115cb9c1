"""
Cross-subject transfer of temporal templates

Templates for a target subject are a weighted mixture of the spatially
filtered class-mean responses of source subjects. The weights are learned on
the target's short calibration run, where both target and sources saw the same
calibration codes, and are then reused for the test codes that only the
sources have responses for.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy import linalg

from cvep_bci.containers import EpochSet, frozen_array
from cvep_bci.decoder import (
    DEFAULT_FB_WEIGHT_A,
    DEFAULT_FB_WEIGHT_B,
    DEFAULT_N_SHIFTS,
    TemplateBank,
    batch_decode,
)
from cvep_bci.errors import ArgumentError, InvariantViolation, MissingDataError
from cvep_bci.preprocess import FilterBankSpec
from cvep_bci.tdca import TdcaModel, fit_tdca

logger = logging.getLogger(__name__)

TRANSFER_FORMAT = "cvep-transfer-weights"
RIDGE_FRACTION = 1e-8


@dataclass(frozen=True, slots=True, eq=False)
class SourceSubject:
    """Class-mean responses of one source subject and its spatial filter.

    Responses are shaped (n_classes, n_channels, n_samples); ``calib_classes``
    and ``test_classes`` give the class id of every row.
    """

    subject_id: str
    calib_responses: np.ndarray
    calib_classes: tuple[int, ...]
    test_responses: np.ndarray
    test_classes: tuple[int, ...]
    spatial_filter: np.ndarray
    fs_hz: float

    def __post_init__(self) -> None:
        calib = frozen_array(self.calib_responses)
        test = frozen_array(self.test_responses)
        weights = frozen_array(self.spatial_filter)
        if calib.ndim != 3 or test.ndim != 3:
            raise InvariantViolation("responses must be (classes, channels, samples)")
        if calib.shape[1] != weights.size or test.shape[1] != weights.size:
            raise InvariantViolation("filter length must match the channel count")
        if not np.isclose(np.linalg.norm(weights), 1.0):
            raise InvariantViolation("spatial filter must have unit norm")
        if len(self.calib_classes) != calib.shape[0]:
            raise InvariantViolation("one calibration class id per response")
        if len(self.test_classes) != test.shape[0]:
            raise InvariantViolation("one test class id per response")
        object.__setattr__(self, "calib_responses", calib)
        object.__setattr__(self, "test_responses", test)
        object.__setattr__(self, "spatial_filter", weights)
        object.__setattr__(
            self, "calib_classes", tuple(int(c) for c in self.calib_classes)
        )
        object.__setattr__(
            self, "test_classes", tuple(int(c) for c in self.test_classes)
        )

    @classmethod
    def from_epochs(
        cls,
        subject_id: str,
        calib: EpochSet,
        test: EpochSet,
        model: TdcaModel,
        component: int = 0,
    ) -> SourceSubject:
        """Average a source subject's trials and keep one TDCA filter."""
        if model.delay_embedding:
            raise ArgumentError("transfer needs a filter without delay embedding")
        if calib.fs_hz != test.fs_hz:
            raise ArgumentError("calibration and test data differ in sampling rate")
        weights = model.filters[:, component]
        calib_classes, calib_means = calib.class_means()
        test_classes, test_means = test.class_means()
        return cls(
            subject_id,
            calib_means,
            tuple(calib_classes.tolist()),
            test_means,
            tuple(test_classes.tolist()),
            weights / np.linalg.norm(weights),
            calib.fs_hz,
        )

    def with_calib_classes(self, class_ids: Sequence[int]) -> SourceSubject:
        """Keep the calibration responses of ``class_ids`` in that order."""
        missing = sorted(set(class_ids) - set(self.calib_classes))
        if missing:
            raise MissingDataError(
                f"source {self.subject_id} has no calibration response for {missing}"
            )
        rows = [self.calib_classes.index(class_id) for class_id in class_ids]
        return SourceSubject(
            self.subject_id,
            self.calib_responses[rows],
            tuple(class_ids),
            self.test_responses,
            self.test_classes,
            self.spatial_filter,
            self.fs_hz,
        )

    def filtered_calib(self) -> np.ndarray:
        """Filtered calibration responses, (n_classes, n_samples)."""
        return np.einsum("c,kct->kt", self.spatial_filter, self.calib_responses)

    def filtered_test(self, class_ids: Sequence[int]) -> np.ndarray:
        """Filtered test responses of ``class_ids`` in that order."""
        missing = sorted(set(class_ids) - set(self.test_classes))
        if missing:
            raise MissingDataError(
                f"source {self.subject_id} has no test response for classes {missing}"
            )
        rows = [self.test_classes.index(class_id) for class_id in class_ids]
        return np.einsum("c,kct->kt", self.spatial_filter, self.test_responses[rows])


@dataclass(frozen=True, slots=True, eq=False)
class TransferWeights:
    """One weight per source subject, in the order of ``subject_ids``."""

    weights: np.ndarray
    subject_ids: tuple[str, ...]
    ridge: float = 0.0

    def __post_init__(self) -> None:
        weights = frozen_array(self.weights)
        if weights.ndim != 1 or weights.size != len(self.subject_ids):
            raise InvariantViolation("need exactly one weight per source subject")
        if not np.all(np.isfinite(weights)):
            raise InvariantViolation("transfer weights must be finite")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "subject_ids", tuple(self.subject_ids))

    def to_dict(self) -> dict[str, Any]:
        return {
            "format": TRANSFER_FORMAT,
            "weights": self.weights.tolist(),
            "subject_ids": list(self.subject_ids),
            "ridge": self.ridge,
        }

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> TransferWeights:
        if payload.get("format") != TRANSFER_FORMAT:
            raise InvariantViolation(
                f"not a transfer weights document: {payload.get('format')!r}"
            )
        return cls(
            np.asarray(payload["weights"], dtype=np.float64),
            tuple(payload["subject_ids"]),
            float(payload.get("ridge", 0.0)),
        )


def _check_sources(
    sources: Sequence[SourceSubject], target_id: str | None, allow_overlap: bool
) -> None:
    if not sources:
        raise ArgumentError("transfer needs at least one source subject")
    ids = [source.subject_id for source in sources]
    if len(set(ids)) != len(ids):
        raise ArgumentError(f"duplicate source subjects: {ids}")
    if target_id is not None and target_id in ids and not allow_overlap:
        raise ArgumentError(
            f"target {target_id} is also a source; pass allow_overlap to permit it"
        )


def fit_weights(
    target_calib: EpochSet,
    target_filter: np.ndarray | TdcaModel,
    sources: Sequence[SourceSubject],
    target_id: str | None = None,
    allow_overlap: bool = False,
) -> TransferWeights:
    """Least-squares weights mapping source responses onto the target's.

    Args:
        target_calib: Target calibration trials.
        target_filter: Target spatial filter, or a model whose first filter is used.
        sources: Source subjects recorded with the same calibration codes.
        target_id: Target subject id, refused as a source unless
            ``allow_overlap`` is set.
        allow_overlap: Permit the target to appear among the sources.

    Returns:
        Weights w minimizing ||b - A w||, where b concatenates the target's
        filtered class means and column n of A those of source n. Collinear
        sources get a ridge of 1e-8 trace(A^T A) / N_sub.
    """
    _check_sources(sources, target_id, allow_overlap)
    if isinstance(target_filter, TdcaModel):
        if target_filter.delay_embedding:
            raise ArgumentError("transfer needs a filter without delay embedding")
        target_filter = target_filter.filters[:, 0]
    target_filter = np.asarray(target_filter, dtype=np.float64)

    classes, means = target_calib.class_means()
    b = np.einsum("c,kct->kt", target_filter, means).reshape(-1)
    columns = []
    for source in sources:
        if source.calib_classes != tuple(classes.tolist()):
            raise ArgumentError(
                f"source {source.subject_id} was calibrated on classes "
                f"{list(source.calib_classes)}, target on {classes.tolist()}"
            )
        if source.fs_hz != target_calib.fs_hz:
            raise ArgumentError(f"source {source.subject_id} has another rate")
        if source.calib_responses.shape[2] != target_calib.n_samples:
            raise ArgumentError(f"source {source.subject_id} has another trial length")
        columns.append(source.filtered_calib().reshape(-1))
    design = np.column_stack(columns)

    gram = design.T @ design
    rhs = design.T @ b
    ridge = 0.0
    if np.linalg.matrix_rank(design) < len(sources):
        trace = float(np.trace(gram))
        if trace == 0.0:
            raise ArgumentError("source calibration responses carry no energy")
        ridge = RIDGE_FRACTION * trace / len(sources)
        logger.warning("Source responses are collinear; using ridge %.3g", ridge)
    weights = linalg.solve(gram + ridge * np.eye(len(sources)), rhs, assume_a="pos")
    logger.debug("Transfer weights %s", weights)
    return TransferWeights(
        weights, tuple(source.subject_id for source in sources), ridge
    )


def transfer_waveforms(
    weights: TransferWeights,
    sources: Sequence[SourceSubject],
    class_ids: Sequence[int],
    n_samples: int | None = None,
) -> np.ndarray:
    """Broadband transfer templates (n_classes, n_samples) for ``class_ids``."""
    if tuple(source.subject_id for source in sources) != weights.subject_ids:
        raise ArgumentError("sources do not match the fitted weights")
    lengths = {source.test_responses.shape[2] for source in sources}
    if len(lengths) != 1:
        raise ArgumentError(f"sources have different test lengths: {sorted(lengths)}")
    available = lengths.pop()
    n_samples = available if n_samples is None else n_samples
    if not 1 <= n_samples <= available:
        raise ArgumentError(f"cannot take {n_samples} of {available} samples")

    mixture = sum(
        w * source.filtered_test(class_ids)[:, :n_samples]
        for w, source in zip(weights.weights, sources)
    )
    return mixture / len(sources)


def build_transfer_templates(
    weights: TransferWeights,
    sources: Sequence[SourceSubject],
    class_ids: Sequence[int],
    fs_hz: float,
    n_samples: int | None = None,
    filterbank: FilterBankSpec | None = None,
    n_shifts: int = DEFAULT_N_SHIFTS,
    fb_weight_a: float = DEFAULT_FB_WEIGHT_A,
    fb_weight_b: float = DEFAULT_FB_WEIGHT_B,
) -> TemplateBank:
    """Template bank of the weighted source responses for the test classes."""
    if any(source.fs_hz != fs_hz for source in sources):
        raise ArgumentError(f"every source must be sampled at {fs_hz} Hz")
    waveforms = transfer_waveforms(weights, sources, class_ids, n_samples)
    return TemplateBank.from_waveforms(
        waveforms,
        fs_hz,
        filterbank,
        n_shifts,
        fb_weight_a,
        fb_weight_b,
        tuple(class_ids),
    )


@dataclass(frozen=True, slots=True, eq=False)
class SubjectRecording:
    """Calibration and test trials of one subject with its fitted filter."""

    subject_id: str
    calib: EpochSet
    test: EpochSet
    model: TdcaModel

    @classmethod
    def fit(
        cls,
        subject_id: str,
        calib: EpochSet,
        test: EpochSet,
        n_components: int = 1,
        ridge_eps: float = 1e-6,
    ) -> SubjectRecording:
        """Fit the subject's TDCA filter on its calibration trials."""
        return cls(subject_id, calib, test, fit_tdca(calib, n_components, ridge_eps))

    def as_source(self) -> SourceSubject:
        return SourceSubject.from_epochs(
            self.subject_id, self.calib, self.test, self.model
        )


def _cross_accuracy(
    target: SubjectRecording,
    template_source: SourceSubject,
    filterbank: FilterBankSpec | None,
    n_shifts: int,
) -> float:
    class_ids = template_source.test_classes
    bank = TemplateBank.from_waveforms(
        template_source.filtered_test(class_ids),
        target.test.fs_hz,
        filterbank,
        n_shifts,
        class_ids=class_ids,
    )
    result = batch_decode(target.test, target.model, bank)
    return float(result.accuracy) if result.accuracy is not None else 0.0


def leave_one_out_transfer(
    recordings: Sequence[SubjectRecording],
    filterbank: FilterBankSpec | None = None,
    n_shifts: int = DEFAULT_N_SHIFTS,
    n_jobs: int = 1,
) -> np.ndarray:
    """Cross-subject accuracy matrix.

    Entry (i, j) is the accuracy of decoding subject i's test trials, filtered
    with subject i's own filter, against templates made of subject j's
    filtered test class means.
    """
    if len(recordings) < 2:
        raise ArgumentError("cross-subject decoding needs at least two subjects")
    sources = [recording.as_source() for recording in recordings]
    pairs = [(i, j) for i in range(len(recordings)) for j in range(len(recordings))]
    accuracies = Parallel(n_jobs=n_jobs)(
        delayed(_cross_accuracy)(recordings[i], sources[j], filterbank, n_shifts)
        for i, j in pairs
    )
    matrix = np.asarray(accuracies, dtype=np.float64).reshape(
        len(recordings), len(recordings)
    )
    logger.info(
        "Cross-subject accuracy: diagonal %.3f, off-diagonal %.3f",
        float(np.mean(np.diag(matrix))),
        float(matrix[~np.eye(len(recordings), dtype=bool)].mean()),
    )
    return matrix
