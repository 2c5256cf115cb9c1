"""
Stimulus design for cVEP and SSVEP spellers

White-noise (WN) codes are drawn i.i.d. uniform on [0, 1] per display frame.
A subset of maximally separated codes is chosen from a large pool by simulated
annealing on the minimum pairwise Euclidean distance, and the selected codes
are placed on the speller grid so that neighboring targets are as distinct as
possible. JFPM codebooks provide the SSVEP counterpart.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Generic, TypeVar

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform

from cvep_bci.containers import (
    DISPLAY_FRAME_RATE_HZ,
    Codebook,
    GridLayout,
    StimulusSequence,
)
from cvep_bci.errors import ArgumentError, CapacityError, InvariantViolation

logger = logging.getLogger(__name__)

# Largest pool (codes x frames) generated in one allocation
MAX_POOL_ELEMENTS = 2**31

# Luminance range of the display
DISPLAY_LEVELS = 255

StateT = TypeVar("StateT")


@dataclass(frozen=True, slots=True)
class AnnealSchedule:
    """Geometric cooling schedule for Metropolis annealing."""

    t_initial: float = 1.0
    t_final: float = 1e-3
    cooling: float = 0.95
    iters_per_temp: int = 200
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.t_final < self.t_initial:
            raise InvariantViolation("need 0 < t_final < t_initial")
        if not 0 < self.cooling < 1:
            raise InvariantViolation(f"cooling must lie in (0, 1): {self.cooling}")
        if self.iters_per_temp < 1:
            raise InvariantViolation("iters_per_temp must be at least 1")

    @property
    def n_temperatures(self) -> int:
        ratio = math.log(self.t_final / self.t_initial) / math.log(self.cooling)
        return math.ceil(ratio)


@dataclass(frozen=True, slots=True)
class AnnealOutcome(Generic[StateT]):
    best_state: StateT
    best_value: float
    initial_value: float
    n_accepted: int


def anneal(
    state: StateT,
    value: float,
    propose: Callable[[StateT, np.random.Generator], tuple[StateT, float]],
    schedule: AnnealSchedule,
    rng: np.random.Generator,
) -> AnnealOutcome[StateT]:
    """Maximize an objective by Metropolis moves under geometric cooling.

    The best state seen is tracked separately from the walk and replaced only
    on strict improvement, so the result never scores below ``value``.
    """
    best_state, best_value = state, value
    initial_value = value
    accepted = 0
    temperature = schedule.t_initial
    for _ in range(schedule.n_temperatures):
        for _ in range(schedule.iters_per_temp):
            candidate, candidate_value = propose(state, rng)
            delta = candidate_value - value
            if delta >= 0 or rng.random() < math.exp(delta / temperature):
                state, value = candidate, candidate_value
                accepted += 1
                if value > best_value:
                    best_state, best_value = state, value
        temperature *= schedule.cooling
    return AnnealOutcome(best_state, best_value, initial_value, accepted)


@dataclass(frozen=True, slots=True, eq=False)
class CodeSelection:
    """Result of annealing a code subset out of a pool."""

    codebook: Codebook
    pool_indices: tuple[int, ...]
    min_distance: float
    initial_min_distance: float
    n_accepted: int


@dataclass(frozen=True, slots=True)
class JfpmSpec:
    """Joint frequency-phase modulation parameters."""

    f_start_hz: float = 8.0
    f_step_hz: float = 0.2
    n_targets: int = 40
    phase_step_rad: float = 0.5 * math.pi
    frame_rate_hz: float = DISPLAY_FRAME_RATE_HZ

    def __post_init__(self) -> None:
        if self.n_targets < 1:
            raise InvariantViolation("n_targets must be at least 1")
        top = self.f_start_hz + (self.n_targets - 1) * self.f_step_hz
        if not 0 < self.f_start_hz or not top < self.frame_rate_hz / 2:
            raise InvariantViolation(
                f"JFPM frequencies {self.f_start_hz}..{top} Hz must lie below "
                f"the display Nyquist {self.frame_rate_hz / 2} Hz"
            )

    def frequencies(self) -> np.ndarray:
        return self.f_start_hz + self.f_step_hz * np.arange(self.n_targets)

    def phases(self) -> np.ndarray:
        return np.mod(self.phase_step_rad * np.arange(self.n_targets), 2 * math.pi)


def generate_wn_pool(n_codes: int, n_frames: int, seed: int) -> Codebook:
    """Draw ``n_codes`` white-noise codes of ``n_frames`` uniform frames."""
    if n_codes < 1 or n_frames < 1:
        raise ArgumentError("n_codes and n_frames must be at least 1")
    if n_codes * n_frames > MAX_POOL_ELEMENTS:
        raise CapacityError(
            f"pool of {n_codes} x {n_frames} frames exceeds {MAX_POOL_ELEMENTS}"
        )
    rng = np.random.default_rng(seed)
    logger.debug("Generating %d WN codes of %d frames", n_codes, n_frames)
    return Codebook.from_frames(rng.random((n_codes, n_frames)), kind="WN")


def to_display_levels(sequence: StimulusSequence) -> np.ndarray:
    """Scale frames to 8-bit luminance levels, rounding halves up."""
    return np.floor(DISPLAY_LEVELS * sequence.frames + 0.5).astype(np.int64)


def min_pairwise_distance(frames: np.ndarray) -> float:
    """Minimum Euclidean distance between any two rows of ``frames``."""
    if frames.shape[0] < 2:
        return math.inf
    return float(pdist(frames).min())


def anneal_codes(pool: Codebook, k: int, schedule: AnnealSchedule) -> CodeSelection:
    """Select ``k`` codes of ``pool`` maximizing the minimum pairwise distance.

    Moves swap one selected code with one unselected code. The selected codes
    are returned in ascending pool order and renumbered from 0.
    """
    n_pool = len(pool)
    if k < 1 or k > n_pool:
        raise ArgumentError(f"cannot select {k} codes from a pool of {n_pool}")

    frames = pool.frame_matrix()
    if k == n_pool:
        value = min_pairwise_distance(frames)
        return CodeSelection(pool, tuple(range(n_pool)), value, value, 0)

    rng = np.random.default_rng(schedule.seed)
    order = rng.permutation(n_pool)
    selected, unselected = order[:k].copy(), order[k:].copy()

    if k == 1:
        return _selection(pool, selected, math.inf, math.inf, 0)

    distances = squareform(pdist(frames[selected]))
    np.fill_diagonal(distances, np.inf)
    state = (selected, unselected, distances)

    def propose(current, rng):
        chosen, rest, dist = current
        out_slot = int(rng.integers(k))
        in_slot = int(rng.integers(n_pool - k))
        chosen, rest, dist = chosen.copy(), rest.copy(), dist.copy()
        chosen[out_slot], rest[in_slot] = rest[in_slot], chosen[out_slot]

        row = cdist(frames[chosen[out_slot]][None, :], frames[chosen])[0]
        row[out_slot] = np.inf
        dist[out_slot, :] = row
        dist[:, out_slot] = row
        return (chosen, rest, dist), float(dist.min())

    outcome = anneal(state, float(distances.min()), propose, schedule, rng)
    logger.info(
        "Selected %d of %d codes, min distance %.4f (initial %.4f)",
        k,
        n_pool,
        outcome.best_value,
        outcome.initial_value,
    )
    return _selection(
        pool,
        outcome.best_state[0],
        outcome.best_value,
        outcome.initial_value,
        outcome.n_accepted,
    )


def _selection(
    pool: Codebook,
    indices: np.ndarray,
    value: float,
    initial: float,
    n_accepted: int,
) -> CodeSelection:
    ordered = sorted(int(index) for index in indices)
    return CodeSelection(
        pool.subset(ordered), tuple(ordered), value, initial, n_accepted
    )


def select_codes(pool: Codebook, k: int, schedule: AnnealSchedule) -> Codebook:
    """Return the ``k`` annealed codes of ``pool`` as a new codebook."""
    return anneal_codes(pool, k, schedule).codebook


def neighbor_pairs(rows: int, cols: int) -> np.ndarray:
    """Return (n_pairs, 2) row-major cell indices adjacent in the 8-neighborhood."""
    pairs = []
    for row in range(rows):
        for col in range(cols):
            for d_row, d_col in ((0, 1), (1, -1), (1, 0), (1, 1)):
                other_row, other_col = row + d_row, col + d_col
                if 0 <= other_row < rows and 0 <= other_col < cols:
                    pairs.append((row * cols + col, other_row * cols + other_col))
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


def layout_objective(
    distances: np.ndarray, occupant: np.ndarray, pairs: np.ndarray
) -> float:
    """Minimum code distance over adjacent cells; ``occupant[cell]`` is a class."""
    if pairs.size == 0:
        return math.inf
    return float(distances[occupant[pairs[:, 0]], occupant[pairs[:, 1]]].min())


def optimize_layout(
    codebook: Codebook,
    rows: int = 5,
    cols: int = 8,
    schedule: AnnealSchedule | None = None,
) -> Codebook:
    """Place codes on a rows x cols grid maximizing neighbor separability.

    The walk starts from the identity layout (class i in cell i) and moves by
    swapping the classes of two cells.
    """
    n_cells = rows * cols
    if n_cells != len(codebook):
        raise ArgumentError(
            f"{rows}x{cols} grid has {n_cells} cells for {len(codebook)} codes"
        )
    schedule = schedule or AnnealSchedule()
    if n_cells < 2:
        return codebook.with_layout(GridLayout.identity(rows, cols))

    distances = squareform(pdist(codebook.frame_matrix()))
    pairs = neighbor_pairs(rows, cols)
    occupant = np.arange(n_cells)
    initial = layout_objective(distances, occupant, pairs)
    rng = np.random.default_rng(schedule.seed)

    def propose(current, rng):
        first, second = rng.choice(n_cells, size=2, replace=False)
        swapped = current.copy()
        swapped[first], swapped[second] = swapped[second], swapped[first]
        return swapped, layout_objective(distances, swapped, pairs)

    outcome = anneal(occupant, initial, propose, schedule, rng)
    logger.info(
        "Optimized %dx%d layout, neighbor min distance %.4f (identity %.4f)",
        rows,
        cols,
        outcome.best_value,
        initial,
    )
    cells = np.empty(n_cells, dtype=np.int64)
    cells[outcome.best_state] = np.arange(n_cells)
    return codebook.with_layout(GridLayout(rows, cols, tuple(cells)))


def generate_jfpm(spec: JfpmSpec, n_frames: int) -> Codebook:
    """Sampled sinusoidal codes 0.5 * (1 + sin(2 pi f_i t + phi_i))."""
    if n_frames < 1:
        raise ArgumentError("n_frames must be at least 1")
    t = np.arange(n_frames) / spec.frame_rate_hz
    phase = 2 * math.pi * spec.frequencies()[:, None] * t[None, :]
    frames = 0.5 * (1.0 + np.sin(phase + spec.phases()[:, None]))
    return Codebook.from_frames(frames, kind="JFPM", frame_rate_hz=spec.frame_rate_hz)
