"""
Class-generic spatial filtering

A single spatial filter shared by all classes is found with the Fisher
criterion: the generalized eigenvectors of the between-class scatter against
the (ridge-regularized) within-class scatter. The spatial pattern is the
forward-model counterpart of the filter and is used to compare subjects.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np
from scipy import linalg

from cvep_bci.containers import EpochSet, frozen_array
from cvep_bci.errors import (
    ArgumentError,
    DegenerateScatter,
    FormatError,
    SingularWithin,
)

logger = logging.getLogger(__name__)

TDCA_FORMAT = "cvep-tdca"


@dataclass(frozen=True, slots=True, eq=False)
class TdcaModel:
    """Spatial filters, patterns and the scatter matrices they came from.

    ``filters`` and ``pattern`` are shaped (n_features, n_components), where
    n_features = n_channels x (delay_embedding + 1).
    """

    filters: np.ndarray
    pattern: np.ndarray
    s_b: np.ndarray
    s_w: np.ndarray
    eigenvalues: np.ndarray
    ridge: float = 0.0
    delay_embedding: int = 0

    def __post_init__(self) -> None:
        for name in ("filters", "pattern", "s_b", "s_w", "eigenvalues"):
            object.__setattr__(self, name, frozen_array(getattr(self, name)))
        if self.filters.ndim != 2 or self.filters.shape[1] < 1:
            raise ArgumentError("filters must be (n_features, n_components)")
        if self.filters.shape[0] % (self.delay_embedding + 1):
            raise ArgumentError("filter length does not match the delay embedding")

    @classmethod
    def identity(cls, n_channels: int = 1) -> TdcaModel:
        """Pass-through model keeping every channel as its own component."""
        eye = np.eye(n_channels)
        return cls(eye, eye, np.zeros_like(eye), eye, np.zeros(n_channels))

    @property
    def n_channels(self) -> int:
        return self.filters.shape[0] // (self.delay_embedding + 1)

    @property
    def n_components(self) -> int:
        return self.filters.shape[1]

    def leading(self, n_components: int) -> TdcaModel:
        """Keep the first ``n_components`` filters and their patterns."""
        if not 1 <= n_components <= self.n_components:
            raise ArgumentError(
                f"cannot keep {n_components} of {self.n_components} components"
            )
        return TdcaModel(
            self.filters[:, :n_components],
            self.pattern[:, :n_components],
            self.s_b,
            self.s_w,
            self.eigenvalues[:n_components],
            self.ridge,
            self.delay_embedding,
        )

    @property
    def within_scatter_regularized(self) -> np.ndarray:
        return self.s_w + self.ridge * np.eye(self.s_w.shape[0])

    def to_dict(self) -> dict[str, Any]:
        return {
            "format": TDCA_FORMAT,
            "filters": self.filters.tolist(),
            "pattern": self.pattern.tolist(),
            "s_b": self.s_b.tolist(),
            "s_w": self.s_w.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "ridge": self.ridge,
            "delay_embedding": self.delay_embedding,
        }

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> TdcaModel:
        if payload.get("format") != TDCA_FORMAT:
            raise FormatError(f"not a TDCA model: {payload.get('format')!r}")
        return cls(
            np.asarray(payload["filters"]),
            np.asarray(payload["pattern"]),
            np.asarray(payload["s_b"]),
            np.asarray(payload["s_w"]),
            np.asarray(payload["eigenvalues"]),
            float(payload["ridge"]),
            int(payload["delay_embedding"]),
        )


def delay_embed(data: np.ndarray, delay_embedding: int) -> np.ndarray:
    """Stack ``delay_embedding`` delayed copies under the channel axis.

    ``data`` is shaped (..., n_channels, n_samples); delayed copies are zero
    before their first sample.
    """
    if delay_embedding == 0:
        return data
    copies = [data]
    for delay in range(1, delay_embedding + 1):
        shifted = np.zeros_like(data)
        shifted[..., delay:] = data[..., :-delay]
        copies.append(shifted)
    return np.concatenate(copies, axis=-2)


def _scatter(data: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    classes = np.unique(labels)
    if classes.size < 2:
        raise DegenerateScatter(f"need at least two classes, got {classes.size}")
    if labels.size < 2:
        raise DegenerateScatter("need at least two trials")

    class_means = np.stack([data[labels == c].mean(axis=0) for c in classes])
    grand_mean = class_means.mean(axis=0)
    between = class_means - grand_mean
    s_b = np.einsum("kct,kdt->cd", between, between) / classes.size

    within = data - class_means[np.searchsorted(classes, labels)]
    s_w = np.einsum("ict,idt->cd", within, within) / labels.size
    return s_b, s_w


def scatter_matrices(epochs: EpochSet) -> tuple[np.ndarray, np.ndarray]:
    """Between-class and within-class scatter of an epoch set."""
    return _scatter(epochs.data, epochs.labels)


def spatial_pattern(sigma_x: np.ndarray, filters: np.ndarray) -> np.ndarray:
    """Forward-model pattern Sigma_x U (U^T Sigma_x U)^-1."""
    sigma_s = filters.T @ sigma_x @ filters
    return sigma_x @ filters @ np.linalg.inv(sigma_s)


def _channel_covariance(data: np.ndarray) -> np.ndarray:
    concatenated = np.moveaxis(data, 0, -2).reshape(data.shape[1], -1)
    return np.atleast_2d(np.cov(concatenated))


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    vectors = vectors / np.linalg.norm(vectors, axis=0, keepdims=True)
    rows = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[rows, np.arange(vectors.shape[1])])
    return vectors * np.where(signs == 0, 1.0, signs)


def _fit(
    data: np.ndarray,
    labels: np.ndarray,
    n_components: int,
    ridge_eps: float,
    delay_embedding: int,
) -> TdcaModel:
    data = delay_embed(data, delay_embedding)
    n_features = data.shape[1]
    if not 1 <= n_components <= n_features:
        raise ArgumentError(
            f"n_components must lie in 1..{n_features}, got {n_components}"
        )
    if ridge_eps < 0:
        raise ArgumentError("ridge_eps must be non-negative")

    s_b, s_w = _scatter(data, labels)
    trace_w = float(np.trace(s_w))
    if ridge_eps == 0.0:
        if np.linalg.matrix_rank(s_w) < n_features:
            raise SingularWithin("within-class scatter is singular and ridge_eps=0")
        ridge = 0.0
    elif trace_w > 0.0:
        ridge = ridge_eps * trace_w / n_features
    else:
        trace_b = float(np.trace(s_b))
        if trace_b == 0.0:
            raise DegenerateScatter("trials carry no variance at all")
        ridge = ridge_eps * trace_b / n_features
        logger.warning(
            "Within-class scatter is zero; ridge scaled by the between-class trace"
        )

    try:
        eigenvalues, eigenvectors = linalg.eigh(
            s_b, s_w + ridge * np.eye(n_features)
        )
    except linalg.LinAlgError as exc:
        raise SingularWithin(f"within-class scatter is not invertible: {exc}") from exc

    order = np.argsort(eigenvalues)[::-1][:n_components]
    filters = _fix_signs(eigenvectors[:, order])
    pattern = spatial_pattern(_channel_covariance(data), filters)
    logger.debug("TDCA eigenvalues %s (ridge %.3g)", eigenvalues[order], ridge)
    return TdcaModel(
        filters, pattern, s_b, s_w, eigenvalues[order], ridge, delay_embedding
    )


def fit_tdca(
    epochs: EpochSet,
    n_components: int = 1,
    ridge_eps: float = 1e-6,
    delay_embedding: int = 0,
) -> TdcaModel:
    """Fit class-generic spatial filters on calibration epochs.

    Args:
        epochs: Calibration trials with at least two classes.
        n_components: Number of leading generalized eigenvectors to keep.
        ridge_eps: Ridge added to S_w, relative to its mean diagonal.
        delay_embedding: Number of delayed channel copies appended.

    Returns:
        The fitted model. Each filter has unit norm and its largest-magnitude
        entry is positive.
    """
    return _fit(epochs.data, epochs.labels, n_components, ridge_eps, delay_embedding)


def fit_pooled_tdca(
    recordings: Sequence[EpochSet],
    n_components: int = 1,
    ridge_eps: float = 1e-6,
    delay_embedding: int = 0,
) -> TdcaModel:
    """Fit one subject-independent filter on the pooled trials of many subjects."""
    pooled = EpochSet.concatenate(list(recordings))
    logger.info("Fitting pooled TDCA on %d trials", pooled.n_trials)
    return fit_tdca(pooled, n_components, ridge_eps, delay_embedding)


def project(data: np.ndarray, model: TdcaModel) -> np.ndarray:
    """Apply the filters to data shaped (..., n_channels, n_samples)."""
    if data.shape[-2] != model.n_channels:
        raise ArgumentError(
            f"data has {data.shape[-2]} channels, model expects {model.n_channels}"
        )
    embedded = delay_embed(data, model.delay_embedding)
    return np.einsum("fc,...ft->...ct", model.filters, embedded)


def spatial_filter(epochs: EpochSet, model: TdcaModel) -> EpochSet:
    """Project every trial onto the model's source components."""
    sources = project(epochs.data, model)
    names = tuple(f"tdca{index}" for index in range(model.n_components))
    return epochs.with_data(sources, channel_names=names)
