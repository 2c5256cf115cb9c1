"""
Unit tests for the cvep-bci containers.

These cover the invariants of the immutable data model and the bit-exact
round trip of the ``.cvep`` and codebook JSON formats.
"""

import json

import numpy as np
import pytest

from cvep_bci.containers import (
    Codebook,
    EpochSet,
    GridLayout,
    RunConfig,
    StimulusSequence,
    load_run_config,
    read_codebook,
    read_epochs,
    save_run_config,
    write_codebook,
    write_epochs,
)
from cvep_bci.errors import (
    ArgumentError,
    CorruptPayload,
    FormatError,
    InvariantViolation,
)


@pytest.fixture
def small_epochs():
    """A 2x3x4 epoch set with float32-representable values."""
    rng = np.random.default_rng(0)
    data = rng.standard_normal((2, 3, 4)).astype(np.float32).astype(np.float64)
    return EpochSet(data, np.array([0, 1]), 250.0, ("Oz", "O1", "O2"))


def test_epoch_round_trip(tmp_path, small_epochs):
    """Test that writing then reading an epoch file is bit-exact."""
    path = tmp_path / "small.cvep"
    write_epochs(path, small_epochs)
    loaded = read_epochs(path)

    np.testing.assert_array_equal(loaded.data, small_epochs.data)
    np.testing.assert_array_equal(loaded.labels, small_epochs.labels)
    assert loaded.fs_hz == 250.0
    assert loaded.channel_names == ("Oz", "O1", "O2")


def test_epoch_round_trip_random_tensors(tmp_path):
    """Test the round trip over several random shapes, empty included."""
    rng = np.random.default_rng(3)
    for index, shape in enumerate([(0, 2, 5), (1, 1, 1), (5, 4, 33)]):
        data = rng.normal(scale=50.0, size=shape).astype(np.float32)
        epochs = EpochSet(data, rng.integers(0, 3, shape[0]), 1000.0)
        path = tmp_path / f"r{index}.cvep"
        write_epochs(path, epochs)
        first = path.read_bytes()
        write_epochs(path, read_epochs(path))
        assert path.read_bytes() == first


def test_epoch_file_layout(tmp_path, small_epochs):
    """Test the header line and little-endian float32 payload."""
    path = tmp_path / "small.cvep"
    write_epochs(path, small_epochs)
    raw = path.read_bytes()

    assert raw.startswith(b"CVEP1 ")
    header_end = raw.index(b"\n")
    header = json.loads(raw[6:header_end])
    assert header["dims"] == [2, 3, 4]
    assert header["byte_order"] == "LE"
    payload = np.frombuffer(raw[header_end + 1 :], dtype="<f4")
    np.testing.assert_array_equal(payload, small_epochs.data.ravel())


def test_read_epochs_bad_magic(tmp_path):
    """Test that a file without the magic prefix is rejected."""
    path = tmp_path / "bad.cvep"
    path.write_bytes(b"NOPE1 {}\n")
    with pytest.raises(FormatError):
        read_epochs(path)


def test_read_epochs_short_payload(tmp_path):
    """Test that a payload one float short raises CorruptPayload."""
    epochs = EpochSet(np.zeros((1, 1, 100)), np.array([0]), 250.0)
    path = tmp_path / "short.cvep"
    write_epochs(path, epochs)
    path.write_bytes(path.read_bytes()[:-4])

    with pytest.raises(CorruptPayload, match="100 floats"):
        read_epochs(path)


def test_codebook_round_trip(tmp_path):
    """Test that a 40-class codebook survives JSON at full precision."""
    rng = np.random.default_rng(7)
    codebook = Codebook.from_frames(rng.random((40, 180)))
    path = tmp_path / "wn.codebook.json"
    write_codebook(path, codebook)
    loaded = read_codebook(path)

    assert len(loaded) == 40
    assert loaded.kind == "WN"
    np.testing.assert_allclose(
        loaded.frame_matrix(), codebook.frame_matrix(), rtol=0, atol=1e-12
    )


def test_codebook_round_trip_with_layout(tmp_path):
    """Test that the grid layout is carried through the JSON document."""
    codebook = Codebook.from_frames(np.eye(4)).with_layout(
        GridLayout(2, 2, (3, 1, 0, 2))
    )
    path = tmp_path / "grid.codebook.json"
    write_codebook(path, codebook)

    assert read_codebook(path).layout == GridLayout(2, 2, (3, 1, 0, 2))


def test_read_codebook_rejects_other_documents(tmp_path):
    """Test that a JSON document of another kind is rejected."""
    path = tmp_path / "other.json"
    path.write_text('{"format": "something-else"}')
    with pytest.raises(FormatError):
        read_codebook(path)


def test_codebook_duplicate_class_id():
    """Test that duplicate class ids violate the codebook invariant."""
    frames = np.full(5, 0.5)
    with pytest.raises(InvariantViolation):
        Codebook((StimulusSequence(0, frames), StimulusSequence(0, frames)))


def test_codebook_empty():
    """Test that an empty codebook is rejected."""
    with pytest.raises(InvariantViolation):
        Codebook(())


def test_codebook_mixed_lengths():
    """Test that sequences of different lengths are rejected."""
    with pytest.raises(InvariantViolation):
        Codebook(
            (
                StimulusSequence(0, np.zeros(5)),
                StimulusSequence(1, np.zeros(6)),
            )
        )


def test_codebook_non_contiguous_ids():
    """Test that class ids must start at 0 without gaps."""
    frames = np.zeros(3)
    with pytest.raises(InvariantViolation):
        Codebook((StimulusSequence(0, frames), StimulusSequence(2, frames)))


def test_codebook_subset_renumbers():
    """Test that a subset is renumbered in the requested order."""
    codebook = Codebook.from_frames(np.array([[0.0, 0.1], [0.2, 0.3], [0.4, 0.5]]))
    subset = codebook.subset([2, 0])

    assert subset.class_ids == (0, 1)
    np.testing.assert_array_equal(subset.frame_matrix(), [[0.4, 0.5], [0.0, 0.1]])


def test_stimulus_sequence_range():
    """Test that frame values outside [0, 1] are rejected."""
    with pytest.raises(InvariantViolation):
        StimulusSequence(0, np.array([0.0, 1.5]))
    with pytest.raises(InvariantViolation):
        StimulusSequence(0, np.array([]))


def test_stimulus_sequence_is_read_only():
    """Test that frames cannot be modified after construction."""
    seq = StimulusSequence(0, np.array([0.2, 0.4]))
    with pytest.raises(ValueError):
        seq.frames[0] = 1.0


def test_epoch_set_invariants():
    """Test the label, rate and finiteness invariants."""
    with pytest.raises(InvariantViolation):
        EpochSet(np.zeros((2, 1, 3)), np.array([0]), 250.0)
    with pytest.raises(InvariantViolation):
        EpochSet(np.zeros((1, 1, 3)), np.array([0]), 0.0)
    with pytest.raises(InvariantViolation):
        EpochSet(np.full((1, 1, 3), np.nan), np.array([0]), 250.0)
    with pytest.raises(InvariantViolation):
        EpochSet(np.zeros((1, 1, 3)), np.array([-1]), 250.0)


def test_class_mean_permutation_invariant():
    """Test that the class mean does not depend on trial order."""
    rng = np.random.default_rng(1)
    epochs = EpochSet(rng.standard_normal((6, 2, 10)), np.array([0, 1] * 3), 250.0)
    order = rng.permutation(6)

    np.testing.assert_allclose(
        epochs.select(order).class_mean(1), epochs.class_mean(1), atol=1e-12
    )


def test_epoch_crop():
    """Test cropping trials to a shorter window."""
    data = np.arange(20, dtype=float).reshape(1, 2, 10)
    epochs = EpochSet(data, np.array([0]), 10.0)
    cropped = epochs.crop(4, start=2)

    assert cropped.n_samples == 4
    np.testing.assert_array_equal(cropped.data[0, 0], [2, 3, 4, 5])
    with pytest.raises(ArgumentError):
        epochs.crop(11)


def test_epoch_concatenate():
    """Test stacking two sets with one montage."""
    first = EpochSet(np.zeros((2, 1, 4)), np.array([0, 1]), 250.0)
    second = EpochSet(np.ones((1, 1, 4)), np.array([1]), 250.0)
    merged = EpochSet.concatenate([first, second])

    assert merged.n_trials == 3
    np.testing.assert_array_equal(merged.labels, [0, 1, 1])


def test_grid_layout_class_grid():
    """Test mapping classes back to grid cells."""
    layout = GridLayout(2, 2, (3, 1, 0, 2))

    assert layout.position(0) == (1, 1)
    np.testing.assert_array_equal(layout.class_grid(), [[2, 1], [3, 0]])
    with pytest.raises(InvariantViolation):
        GridLayout(2, 2, (0, 0, 1, 2))


def test_run_config_defaults():
    """Test the documented default settings."""
    config = RunConfig()

    assert config.fs_hz == 250.0
    assert config.svd_alpha == 0.9
    assert (config.tau_min_s, config.tau_max_s) == (0.0, 0.5)
    assert config.n_filterbanks == 5
    assert config.gaze_shift_s == 0.5


def test_run_config_invariants():
    """Test that invalid settings are rejected."""
    with pytest.raises(InvariantViolation):
        RunConfig(tau_min_s=0.5, tau_max_s=0.5)
    with pytest.raises(InvariantViolation):
        RunConfig(svd_alpha=0.0)
    with pytest.raises(InvariantViolation):
        RunConfig(n_filterbanks=0)
    with pytest.raises(InvariantViolation):
        RunConfig.from_dict({"sed": 1})


def test_run_config_file_round_trip(tmp_path):
    """Test saving and loading a config keeps its hash."""
    config = RunConfig(seed=11, svd_alpha=0.95, truncation_rule="reach_alpha")
    path = tmp_path / "run.json"
    save_run_config(path, config)
    loaded = load_run_config(path)

    assert loaded == config
    assert loaded.config_hash() == config.config_hash()
    assert RunConfig(seed=12).config_hash() != config.config_hash()
