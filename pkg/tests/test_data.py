import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import midi_oracle
from pgbn.data import (
    Dataset,
    PianoRoll,
    decode_pianoroll,
    downsample_array,
    downsample_to_phase,
    encode_pianoroll,
    export_midi,
    load_dataset,
    load_pianoroll,
    save_pianoroll,
    synth_dataset,
    validate,
)
from pgbn.errors import ConfigurationError, FormatError
from pgbn.networks import DEFAULT_TRACK_NAMES

TIME_CHAIN = [96, 48, 24, 12, 6, 3, 1]
PITCH_CHAIN = [84, 12, 4, 2, 1]


def _roll_strategy(max_bars=2, max_steps=8, max_pitches=8, max_tracks=3):
    @st.composite
    def build(draw):
        shape = (draw(st.integers(1, max_bars)), draw(st.integers(1, max_steps)),
                 draw(st.integers(1, max_pitches)), draw(st.integers(1, max_tracks)))
        cells = draw(arrays(np.uint8, shape, elements=st.integers(0, 1)))
        names = tuple(f"t{i}" for i in range(shape[3]))
        return PianoRoll(cells, names)

    return build()


@settings(max_examples=100, deadline=None)
@given(_roll_strategy())
def test_round_trip_random(roll):
    buf = io.BytesIO()
    save_pianoroll(roll, buf)
    buf.seek(0)
    assert load_pianoroll(buf) == roll


def test_round_trip_file(tmp_path):
    roll = synth_dataset(1, seed=3).rolls[0]
    save_pianoroll(roll, tmp_path / "a.pgbn")
    back = load_pianoroll(tmp_path / "a.pgbn")
    assert back == roll and back.tracks == DEFAULT_TRACK_NAMES


def test_all_zero_full_roll_payload():
    blob = encode_pianoroll(PianoRoll.empty())
    header = 4 + 1 + 16 + sum(2 + len(n.encode()) for n in DEFAULT_TRACK_NAMES)
    payload = blob[header:]
    assert len(payload) == 32256
    assert payload == bytes(32256)


def test_header_layout():
    blob = encode_pianoroll(PianoRoll(np.ones((1, 2, 3, 1), np.uint8), ("ab",)))
    assert blob[:4] == b"PGBN" and blob[4] == 1
    assert blob[5:21] == bytes([1, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0, 1, 0, 0, 0])
    assert blob[21:25] == b"\x02\x00ab"
    # six ones packed MSB first
    assert blob[25:] == bytes([0b11111100])


@pytest.mark.parametrize("cut", [0, 3, 10, 22, -1])
def test_truncated_stream_is_format_error(cut):
    blob = encode_pianoroll(synth_dataset(1, (1, 4, 4, 2), seed=0).rolls[0])
    with pytest.raises(FormatError):
        decode_pianoroll(blob[:cut])


def test_bad_magic_and_version():
    blob = bytearray(encode_pianoroll(PianoRoll(np.zeros((1, 1, 1, 1), np.uint8), ("x",))))
    with pytest.raises(FormatError):
        decode_pianoroll(b"XXXX" + bytes(blob[4:]))
    blob[4] = 9
    with pytest.raises(FormatError):
        decode_pianoroll(bytes(blob))


def test_encode_rejects_invalid_roll():
    cells = np.zeros((1, 2, 2, 1))
    cells[0, 0, 0, 0] = 0.5
    with pytest.raises(FormatError):
        encode_pianoroll(PianoRoll(cells, ("x",)))


def test_validate_examples():
    assert validate(PianoRoll.empty()) == []
    cells = np.zeros((1, 2, 2, 1))
    cells[0, 1, 1, 0] = 0.5
    assert any(v.startswith("binarity") for v in validate(PianoRoll(cells, ("x",))))
    assert any(v.startswith("shape") for v in validate(PianoRoll(np.zeros((1, 2, 2, 3)), ("x",))))
    assert any(v.startswith("pitch range") for v in validate(PianoRoll(np.zeros((1, 1, 200, 1)), ("x",))))
    assert validate(PianoRoll(np.zeros((2, 2)), ("x",)))


def test_downsample_examples():
    empty = PianoRoll.empty()
    for t in TIME_CHAIN:
        for p in PITCH_CHAIN:
            assert not downsample_to_phase(empty, t, p).cells.any()
    one = PianoRoll.empty()
    one.cells[2, 50, 40, 5] = 1
    for t in TIME_CHAIN:
        for p in PITCH_CHAIN:
            assert downsample_to_phase(one, t, p).cells.sum() == 1


def test_downsample_bar_cells():
    roll = synth_dataset(1, seed=4).rolls[0]
    active = roll.cells.any(axis=(1, 2))
    out = downsample_to_phase(roll, 1, 1).cells
    np.testing.assert_array_equal(out[:, 0, 0, :], active.astype(np.uint8))


def test_downsample_rejects_non_divisor():
    with pytest.raises(ConfigurationError):
        downsample_to_phase(PianoRoll.empty(), 5, 1)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(TIME_CHAIN), st.sampled_from(PITCH_CHAIN))
def test_downsample_monotone(seed, t, p):
    rng = np.random.default_rng(seed)
    cells = (rng.random((1, 96, 84, 2)) < 0.002).astype(np.uint8)
    more = cells.copy()
    more[0, rng.integers(96), rng.integers(84), rng.integers(2)] = 1
    a = downsample_array(cells[None], t, p)
    b = downsample_array(more[None], t, p)
    assert np.all(b >= a)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.data())
def test_downsample_composes(seed, data):
    rng = np.random.default_rng(seed)
    cells = (rng.random((2, 1, 96, 84, 1)) < 0.003).astype(np.uint8)
    ia = data.draw(st.integers(0, len(TIME_CHAIN) - 1))
    ib = data.draw(st.integers(ia, len(TIME_CHAIN) - 1))
    ja = data.draw(st.integers(0, len(PITCH_CHAIN) - 1))
    jb = data.draw(st.integers(ja, len(PITCH_CHAIN) - 1))
    mid = downsample_array(cells, TIME_CHAIN[ia], PITCH_CHAIN[ja])
    np.testing.assert_array_equal(
        downsample_array(mid, TIME_CHAIN[ib], PITCH_CHAIN[jb]),
        downsample_array(cells, TIME_CHAIN[ib], PITCH_CHAIN[jb]),
    )


def test_synth_determinism_and_shape():
    a = synth_dataset(64, (2, 12, 12, 2), seed=7)
    b = synth_dataset(64, (2, 12, 12, 2), seed=7)
    c = synth_dataset(64, (2, 12, 12, 2), seed=8)
    assert len(a) == 64
    assert all(r.cells.shape == (2, 12, 12, 2) for r in a.rolls)
    np.testing.assert_array_equal(a.to_array(), b.to_array())
    assert not np.array_equal(a.to_array(), c.to_array())


@pytest.mark.parametrize("shape", [(2, 12, 12, 2), (4, 96, 84, 8), (1, 8, 4, 3), (2, 6, 30, 1)])
def test_synth_density_bounds(shape):
    ds = synth_dataset(20, shape, seed=1)
    arr = ds.to_array()
    assert set(np.unique(arr)) <= {0.0, 1.0}
    density = arr.mean()
    assert 0.01 <= density <= 0.30
    assert all(validate(r) == [] for r in ds.rolls)


def test_synth_rejects_bad_arguments():
    with pytest.raises(ConfigurationError):
        synth_dataset(0)
    with pytest.raises(ConfigurationError):
        synth_dataset(1, style="noise")


def test_dataset_shape_homogeneity():
    with pytest.raises(ConfigurationError):
        Dataset([PianoRoll(np.zeros((1, 2, 2, 1)), ("a",)), PianoRoll(np.zeros((1, 3, 2, 1)), ("a",))])


def test_load_dataset_directory(tmp_path):
    ds = synth_dataset(3, (1, 4, 4, 2), seed=2)
    for i, r in enumerate(ds.rolls):
        save_pianoroll(r, tmp_path / f"{i}.pgbn")
    back = load_dataset(tmp_path)
    np.testing.assert_array_equal(back.to_array(), ds.to_array())
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "missing")


def _export(roll, tempo=120.0):
    buf = io.BytesIO()
    export_midi(roll, tempo, buf)
    return midi_oracle.parse(buf.getvalue())


def test_midi_empty_roll_has_no_notes():
    parsed = _export(PianoRoll.empty())
    assert parsed["format"] == 1
    assert len(parsed["tracks"]) == 8
    assert all(midi_oracle.notes(t) == [] for t in parsed["tracks"])


def test_midi_one_beat_c1():
    roll = PianoRoll.empty()
    roll.cells[0, 0:24, 0, 1] = 1
    parsed = _export(roll)
    assert midi_oracle.notes(parsed["tracks"][1]) == [(24, 0, 0, 24)]
    assert parsed["division"] == 24


def test_midi_top_pitch_and_drum_channel():
    roll = PianoRoll.empty()
    roll.cells[1, 5, 83, 0] = 1
    (note,) = midi_oracle.notes(_export(roll)["tracks"][0])
    assert note == (107, 9, 96 + 5, 96 + 6)


def test_midi_tempo_and_meter():
    parsed = _export(PianoRoll.empty(), tempo=90)
    assert midi_oracle.tempo_bpm(parsed) == pytest.approx(90.0)
    sigs = [ev for ev in parsed["tracks"][0] if ev[0] == "meta" and ev[2] == 0x58]
    assert sigs and sigs[0][3][:2] == bytes([4, 2])


def test_midi_adjacent_notes_stay_separate():
    roll = PianoRoll(np.zeros((1, 8, 2, 1), np.uint8), ("Piano",))
    roll.cells[0, 0:3, 1, 0] = 1
    roll.cells[0, 4:8, 1, 0] = 1
    assert midi_oracle.notes(_export(roll)["tracks"][0]) == [(25, 0, 0, 3), (25, 0, 4, 8)]


@settings(max_examples=40, deadline=None)
@given(_roll_strategy(max_bars=3, max_steps=10, max_pitches=10, max_tracks=3))
def test_midi_reimport_matches(roll):
    b, s, p, _ = roll.cells.shape
    parsed = _export(roll)
    np.testing.assert_array_equal(midi_oracle.to_cells(parsed, b, s, p), roll.cells)
