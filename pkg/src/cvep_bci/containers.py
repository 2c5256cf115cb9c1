"""
Containers for cVEP data

This module holds the immutable data model shared by every stage (stimulus
sequences, codebooks, epoch tensors, run configuration) together with the
on-disk formats used to exchange them:

- ``.cvep`` epoch files: a header line ``CVEP1 {json}\\n`` followed by a raw
  little-endian float32 payload, trial-major, channel-major, time-minor.
- ``.codebook.json`` documents with frame values at full double precision.
- ``RunConfig`` JSON files.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Literal, Sequence

import numpy as np

from cvep_bci.errors import (
    ArgumentError,
    CorruptPayload,
    FormatError,
    InvariantViolation,
)

logger = logging.getLogger(__name__)

# Display refresh rate of the stimulation monitor
DISPLAY_FRAME_RATE_HZ = 60.0

# Epoch container framing
EPOCH_MAGIC = b"CVEP1"
EPOCH_BYTE_ORDER = "LE"
EPOCH_DTYPE = np.dtype("<f4")

CODEBOOK_FORMAT = "cvep-codebook"
CODEBOOK_VERSION = 1

CodebookKind = Literal["WN", "JFPM"]
TruncationRule = Literal["below_alpha", "reach_alpha"]

CODEBOOK_KINDS: tuple[CodebookKind, ...] = ("WN", "JFPM")
TRUNCATION_RULES: tuple[TruncationRule, ...] = ("below_alpha", "reach_alpha")


def frozen_array(values: Any, dtype: Any = np.float64) -> np.ndarray:
    """Return a read-only copy of ``values`` with the given dtype."""
    array = np.array(values, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, slots=True, eq=False)
class StimulusSequence:
    """Luminance values of one code, one value per display frame."""

    class_id: int
    frames: np.ndarray
    frame_rate_hz: float = DISPLAY_FRAME_RATE_HZ

    def __post_init__(self) -> None:
        frames = frozen_array(self.frames)
        if frames.ndim != 1 or frames.size == 0:
            raise InvariantViolation("frames must be a non-empty vector")
        if not np.all(np.isfinite(frames)):
            raise InvariantViolation("frames must be finite")
        if frames.min() < 0.0 or frames.max() > 1.0:
            raise InvariantViolation("frame values must lie in [0, 1]")
        if not self.frame_rate_hz > 0:
            raise InvariantViolation(
                f"frame rate must be positive, got {self.frame_rate_hz}"
            )
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "class_id", int(self.class_id))
        object.__setattr__(self, "frame_rate_hz", float(self.frame_rate_hz))

    @property
    def n_frames(self) -> int:
        return int(self.frames.size)

    @property
    def duration_s(self) -> float:
        return self.n_frames / self.frame_rate_hz


@dataclass(frozen=True, slots=True)
class GridLayout:
    """Assignment of classes to the cells of a rows x cols speller grid.

    ``cells[class_id]`` is the row-major cell index of that class.
    """

    rows: int
    cols: int
    cells: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise InvariantViolation("grid must have at least one row and column")
        cells = tuple(int(cell) for cell in self.cells)
        if sorted(cells) != list(range(self.rows * self.cols)):
            raise InvariantViolation(
                f"cells must be a permutation of 0..{self.rows * self.cols - 1}"
            )
        object.__setattr__(self, "cells", cells)

    @classmethod
    def identity(cls, rows: int, cols: int) -> GridLayout:
        return cls(rows, cols, tuple(range(rows * cols)))

    def position(self, class_id: int) -> tuple[int, int]:
        """Return the (row, col) of a class."""
        return divmod(self.cells[class_id], self.cols)

    def class_grid(self) -> np.ndarray:
        """Return a rows x cols array holding the class id shown in each cell."""
        grid = np.empty(self.rows * self.cols, dtype=np.int64)
        grid[list(self.cells)] = np.arange(len(self.cells))
        return grid.reshape(self.rows, self.cols)


@dataclass(frozen=True, slots=True, eq=False)
class Codebook:
    """Ordered set of stimulus sequences sharing length and frame rate."""

    sequences: tuple[StimulusSequence, ...]
    kind: CodebookKind = "WN"
    layout: GridLayout | None = None

    def __post_init__(self) -> None:
        sequences = tuple(sorted(self.sequences, key=lambda seq: seq.class_id))
        if not sequences:
            raise InvariantViolation("a codebook needs at least one sequence")
        if self.kind not in CODEBOOK_KINDS:
            raise InvariantViolation(f"unknown codebook kind: {self.kind}")

        lengths = {seq.n_frames for seq in sequences}
        if len(lengths) != 1:
            raise InvariantViolation(
                f"all sequences must share one length, got {sorted(lengths)}"
            )
        rates = {seq.frame_rate_hz for seq in sequences}
        if len(rates) != 1:
            raise InvariantViolation(
                f"all sequences must share one frame rate, got {sorted(rates)}"
            )

        class_ids = [seq.class_id for seq in sequences]
        if len(set(class_ids)) != len(class_ids):
            raise InvariantViolation("class ids must be unique")
        if class_ids != list(range(len(class_ids))):
            raise InvariantViolation("class ids must be contiguous from 0")

        if self.layout is not None and len(self.layout.cells) != len(sequences):
            raise InvariantViolation(
                f"layout has {len(self.layout.cells)} cells for "
                f"{len(sequences)} codes"
            )
        object.__setattr__(self, "sequences", sequences)

    @classmethod
    def from_frames(
        cls,
        frames: np.ndarray,
        kind: CodebookKind = "WN",
        frame_rate_hz: float = DISPLAY_FRAME_RATE_HZ,
    ) -> Codebook:
        """Build a codebook from an (n_codes, n_frames) matrix."""
        matrix = np.asarray(frames, dtype=np.float64)
        if matrix.ndim != 2:
            raise InvariantViolation("frames must be an (n_codes, n_frames) matrix")
        return cls(
            tuple(
                StimulusSequence(class_id, row, frame_rate_hz)
                for class_id, row in enumerate(matrix)
            ),
            kind=kind,
        )

    def __len__(self) -> int:
        return len(self.sequences)

    @property
    def n_frames(self) -> int:
        return self.sequences[0].n_frames

    @property
    def frame_rate_hz(self) -> float:
        return self.sequences[0].frame_rate_hz

    @property
    def class_ids(self) -> tuple[int, ...]:
        return tuple(range(len(self.sequences)))

    def frame_matrix(self) -> np.ndarray:
        """Return the (n_codes, n_frames) frame matrix ordered by class id."""
        return np.stack([seq.frames for seq in self.sequences])

    def subset(self, indices: Sequence[int]) -> Codebook:
        """Return the codes at ``indices`` renumbered 0..k-1 in the given order."""
        if len(indices) == 0:
            raise ArgumentError("subset needs at least one index")
        rows = self.frame_matrix()[np.asarray(indices, dtype=np.int64)]
        return Codebook.from_frames(rows, self.kind, self.frame_rate_hz)

    def with_layout(self, layout: GridLayout | None) -> Codebook:
        return Codebook(self.sequences, self.kind, layout)


@dataclass(frozen=True, slots=True, eq=False)
class EpochSet:
    """Labeled EEG trials shaped (n_trials, n_channels, n_samples)."""

    data: np.ndarray
    labels: np.ndarray
    fs_hz: float
    channel_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        data = frozen_array(self.data)
        labels = frozen_array(self.labels, dtype=np.int64)
        if data.ndim != 3:
            raise InvariantViolation(
                f"epoch data must be 3-D (trials, channels, samples), got {data.ndim}-D"
            )
        if labels.ndim != 1 or labels.size != data.shape[0]:
            raise InvariantViolation(
                f"{labels.size} labels for {data.shape[0]} trials"
            )
        if not self.fs_hz > 0:
            raise InvariantViolation(f"sampling rate must be positive: {self.fs_hz}")
        if labels.size and labels.min() < 0:
            raise InvariantViolation("labels must be non-negative class ids")
        if not np.all(np.isfinite(data)):
            raise InvariantViolation("epoch data must be finite")

        names = tuple(str(name) for name in self.channel_names) or tuple(
            f"ch{index}" for index in range(data.shape[1])
        )
        if len(names) != data.shape[1]:
            raise InvariantViolation(
                f"{len(names)} channel names for {data.shape[1]} channels"
            )
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "fs_hz", float(self.fs_hz))
        object.__setattr__(self, "channel_names", names)

    @property
    def n_trials(self) -> int:
        return int(self.data.shape[0])

    @property
    def n_channels(self) -> int:
        return int(self.data.shape[1])

    @property
    def n_samples(self) -> int:
        return int(self.data.shape[2])

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.fs_hz

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.labels)

    def class_mean(self, class_id: int) -> np.ndarray:
        """Return the trial average (n_channels, n_samples) of one class."""
        mask = self.labels == class_id
        if not mask.any():
            raise ArgumentError(f"no trials for class {class_id}")
        return self.data[mask].mean(axis=0)

    def class_means(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (classes, means) with means shaped (n_classes, ch, samples)."""
        classes = self.classes
        return classes, np.stack([self.class_mean(int(c)) for c in classes])

    def select(self, indices: Sequence[int] | np.ndarray) -> EpochSet:
        index = np.asarray(indices, dtype=np.int64)
        return EpochSet(
            self.data[index], self.labels[index], self.fs_hz, self.channel_names
        )

    def crop(self, n_samples: int, start: int = 0) -> EpochSet:
        """Keep ``n_samples`` samples of every trial beginning at ``start``."""
        if n_samples < 1 or start < 0 or start + n_samples > self.n_samples:
            raise ArgumentError(
                f"cannot crop {n_samples} samples at {start} from {self.n_samples}"
            )
        return self.with_data(self.data[:, :, start : start + n_samples])

    def with_data(
        self,
        data: np.ndarray,
        *,
        fs_hz: float | None = None,
        channel_names: Sequence[str] | None = None,
    ) -> EpochSet:
        """Return a copy carrying new data and the same labels."""
        if channel_names is None:
            channel_names = (
                self.channel_names if data.shape[1] == self.n_channels else ()
            )
        return EpochSet(
            data,
            self.labels,
            self.fs_hz if fs_hz is None else fs_hz,
            tuple(channel_names),
        )

    @classmethod
    def concatenate(cls, parts: Sequence[EpochSet]) -> EpochSet:
        """Stack the trials of several epoch sets recorded with one montage."""
        if not parts:
            raise ArgumentError("nothing to concatenate")
        first = parts[0]
        for part in parts[1:]:
            if part.fs_hz != first.fs_hz or part.data.shape[1:] != first.data.shape[1:]:
                raise ArgumentError("epoch sets differ in rate, channels or length")
        return cls(
            np.concatenate([part.data for part in parts]),
            np.concatenate([part.labels for part in parts]),
            first.fs_hz,
            first.channel_names,
        )


@dataclass(frozen=True, slots=True)
class RunConfig:
    """Numeric settings shared by the calibration and decoding stages."""

    seed: int = 0
    fs_hz: float = 250.0
    n_filterbanks: int = 5
    fb_weight_a: float = 1.25
    fb_weight_b: float = 0.25
    n_shifts: int = 2
    tau_min_s: float = 0.0
    tau_max_s: float = 0.5
    svd_alpha: float = 0.9
    n_spatial_components: int = 1
    ridge_eps: float = 1e-6
    delay_embedding: int = 0
    truncation_rule: TruncationRule = "below_alpha"
    gaze_shift_s: float = 0.5
    notch_hz: float = 50.0
    mi_upper_hz: float = 125.0
    filterbank_high_hz: float = 90.0

    def __post_init__(self) -> None:
        if not self.tau_min_s < self.tau_max_s:
            raise InvariantViolation("tau_min_s must be below tau_max_s")
        if self.n_filterbanks < 1:
            raise InvariantViolation("at least one filter bank is required")
        if not 0.0 < self.svd_alpha <= 1.0:
            raise InvariantViolation(f"svd_alpha must lie in (0, 1]: {self.svd_alpha}")
        if not self.fs_hz > 0:
            raise InvariantViolation("fs_hz must be positive")
        if self.n_shifts < 0 or self.n_spatial_components < 1:
            raise InvariantViolation("n_shifts >= 0 and n_spatial_components >= 1")
        if self.ridge_eps < 0 or self.delay_embedding < 0 or self.gaze_shift_s < 0:
            raise InvariantViolation(
                "ridge_eps, delay_embedding and gaze_shift_s must be non-negative"
            )
        if self.truncation_rule not in TRUNCATION_RULES:
            raise InvariantViolation(
                f"unknown truncation rule: {self.truncation_rule}"
            )

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> RunConfig:
        known = {item.name for item in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise InvariantViolation(f"unknown RunConfig keys: {sorted(unknown)}")
        return cls(**payload)

    def config_hash(self) -> str:
        """Return the SHA-256 of the canonical JSON form of this config."""
        return canonical_hash(self.to_dict())


def canonical_hash(payload: Any) -> str:
    """Hash a JSON-serializable payload independently of key order."""
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def write_json(path: str | Path, payload: Any) -> None:
    Path(path).write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def read_json(path: str | Path) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path} is not valid JSON: {exc}") from exc


def load_run_config(path: str | Path) -> RunConfig:
    payload = read_json(path)
    if not isinstance(payload, dict):
        raise FormatError(f"{path} must hold a JSON object")
    return RunConfig.from_dict(payload)


def save_run_config(path: str | Path, config: RunConfig) -> None:
    write_json(path, config.to_dict())


def write_epochs(path: str | Path, epochs: EpochSet) -> None:
    """Write an epoch set as a ``.cvep`` container."""
    header = {
        "magic": EPOCH_MAGIC.decode("ascii"),
        "dims": list(epochs.data.shape),
        "fs_hz": epochs.fs_hz,
        "labels": [int(label) for label in epochs.labels],
        "channel_names": list(epochs.channel_names),
        "byte_order": EPOCH_BYTE_ORDER,
    }
    header_line = EPOCH_MAGIC + b" " + json.dumps(header).encode("utf-8") + b"\n"
    payload = np.ascontiguousarray(epochs.data, dtype=EPOCH_DTYPE).tobytes()
    Path(path).write_bytes(header_line + payload)
    logger.debug("Wrote %s trials x %s channels to %s", *epochs.data.shape[:2], path)


def read_epochs(path: str | Path) -> EpochSet:
    """Read a ``.cvep`` container written by :func:`write_epochs`."""
    raw = Path(path).read_bytes()
    if not raw.startswith(EPOCH_MAGIC + b" "):
        raise FormatError(f"{path} does not start with {EPOCH_MAGIC!r}")

    newline = raw.find(b"\n")
    if newline < 0:
        raise FormatError(f"{path} has no header terminator")
    try:
        header = json.loads(raw[len(EPOCH_MAGIC) + 1 : newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path} has an unreadable header: {exc}") from exc

    if header.get("magic") != EPOCH_MAGIC.decode("ascii"):
        raise FormatError(f"{path} header magic is {header.get('magic')!r}")
    if header.get("byte_order") != EPOCH_BYTE_ORDER:
        raise FormatError(f"unsupported byte order {header.get('byte_order')!r}")
    dims = header.get("dims")
    if (
        not isinstance(dims, list)
        or len(dims) != 3
        or not all(isinstance(dim, int) and dim >= 0 for dim in dims)
    ):
        raise FormatError(f"{path} header has invalid dims {dims!r}")

    payload = raw[newline + 1 :]
    expected = math.prod(dims)
    if len(payload) != expected * EPOCH_DTYPE.itemsize:
        raise CorruptPayload(
            f"header claims {expected} floats, payload has "
            f"{len(payload) / EPOCH_DTYPE.itemsize:g}"
        )
    labels = header.get("labels", [])
    if len(labels) != dims[0]:
        raise CorruptPayload(f"header lists {len(labels)} labels for {dims[0]} trials")

    data = np.frombuffer(payload, dtype=EPOCH_DTYPE).reshape(dims)
    return EpochSet(
        data.astype(np.float64),
        np.asarray(labels, dtype=np.int64),
        float(header["fs_hz"]),
        tuple(header.get("channel_names", ())),
    )


def codebook_to_dict(codebook: Codebook) -> dict[str, Any]:
    layout = codebook.layout
    return {
        "format": CODEBOOK_FORMAT,
        "version": CODEBOOK_VERSION,
        "kind": codebook.kind,
        "frame_rate_hz": codebook.frame_rate_hz,
        "layout": (
            None
            if layout is None
            else {"rows": layout.rows, "cols": layout.cols, "cells": list(layout.cells)}
        ),
        "sequences": [
            {"class_id": seq.class_id, "frames": [float(x) for x in seq.frames]}
            for seq in codebook.sequences
        ],
    }


def codebook_from_dict(payload: dict[str, Any]) -> Codebook:
    if payload.get("format") != CODEBOOK_FORMAT:
        raise FormatError(f"not a codebook document: {payload.get('format')!r}")
    rate = float(payload["frame_rate_hz"])
    layout = payload.get("layout")
    return Codebook(
        tuple(
            StimulusSequence(item["class_id"], item["frames"], rate)
            for item in payload["sequences"]
        ),
        kind=payload.get("kind", "WN"),
        layout=None
        if layout is None
        else GridLayout(layout["rows"], layout["cols"], tuple(layout["cells"])),
    )


def write_codebook(path: str | Path, codebook: Codebook) -> None:
    """Write a codebook as JSON with frame values at full precision."""
    write_json(path, codebook_to_dict(codebook))


def read_codebook(path: str | Path) -> Codebook:
    payload = read_json(path)
    if not isinstance(payload, dict):
        raise FormatError(f"{path} must hold a JSON object")
    return codebook_from_dict(payload)
