"""Multitrack binary piano-rolls: model, PGBN codec, pooling, synthesis, MIDI.

PGBN layout (all integers little-endian)::

    b"PGBN" | version u8 | bars u32 | steps u32 | pitches u32 | tracks u32
    | per track: name length u16, UTF-8 name
    | ceil(bars*steps*pitches*tracks / 8) bytes of packed cells, MSB first,
      row-major (bar, step, pitch, track)
"""

from __future__ import annotations

import io
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Union

import mido
import numpy as np

from pgbn.networks import DEFAULT_TRACK_NAMES
from pgbn.errors import ConfigurationError, FormatError

MAGIC = b"PGBN"
VERSION = 1
STEPS_PER_BEAT = 24
BEATS_PER_BAR = 4
LOWEST_MIDI_PITCH = 24  # C1
DRUM_CHANNEL = 9  # MIDI channel 10

# General MIDI programs for the default instrument names
GM_PROGRAMS = {
    "Drums": 0,
    "Piano": 0,
    "Guitar": 24,
    "Bass": 32,
    "Ensemble": 48,
    "Reed": 64,
    "Synth Lead": 80,
    "Synth Pad": 88,
}


@dataclass
class PianoRoll:
    """Binary score tensor indexed ``[bar, step, pitch, track]``.

    Pitch index 0 is C1 and 83 is B7 at the default 84-pitch range.
    """

    cells: np.ndarray
    tracks: tuple = DEFAULT_TRACK_NAMES

    def __post_init__(self):
        self.cells = np.asarray(self.cells)
        self.tracks = tuple(self.tracks)

    @property
    def shape(self) -> tuple:
        return self.cells.shape

    @property
    def bars(self) -> int:
        return self.cells.shape[0]

    @property
    def steps_per_bar(self) -> int:
        return self.cells.shape[1]

    @property
    def pitches(self) -> int:
        return self.cells.shape[2]

    def __eq__(self, other):
        if not isinstance(other, PianoRoll):
            return NotImplemented
        return (
            self.tracks == other.tracks
            and self.cells.shape == other.cells.shape
            and bool(np.array_equal(self.cells, other.cells))
        )

    @classmethod
    def empty(cls, bars=4, steps=96, pitches=84, tracks=DEFAULT_TRACK_NAMES) -> "PianoRoll":
        return cls(np.zeros((bars, steps, pitches, len(tracks)), dtype=np.uint8), tuple(tracks))


@dataclass
class Dataset:
    rolls: list
    provenance: str = ""

    def __post_init__(self):
        shapes = {r.shape for r in self.rolls}
        if len(shapes) > 1:
            raise ConfigurationError(f"dataset rolls have mixed shapes: {sorted(shapes)}")

    def __len__(self):
        return len(self.rolls)

    def to_array(self, dtype=np.float32) -> np.ndarray:
        """Stack into ``(count, bars, steps, pitches, tracks)``."""
        return np.stack([r.cells for r in self.rolls]).astype(dtype)


def validate(roll: PianoRoll, max_pitches: int = 128 - LOWEST_MIDI_PITCH) -> list:
    """Return a list of human-readable violations; empty means valid."""
    problems = []
    cells = np.asarray(roll.cells)
    if cells.ndim != 4:
        return [f"shape: expected 4 axes (bar, step, pitch, track), got {cells.ndim}"]
    if cells.shape[3] != len(roll.tracks):
        problems.append(
            f"shape: {cells.shape[3]} track planes but {len(roll.tracks)} track names declared"
        )
    if min(cells.shape) < 1:
        problems.append(f"shape: empty axis in {cells.shape}")
    if cells.shape[2] > max_pitches:
        problems.append(f"pitch range: {cells.shape[2]} pitches exceed the {max_pitches} available")
    if cells.size and not np.all((cells == 0) | (cells == 1)):
        bad = int(np.count_nonzero((cells != 0) & (cells != 1)))
        problems.append(f"binarity: {bad} cells are neither 0 nor 1")
    return problems


def _open(target, mode):
    if isinstance(target, (str, os.PathLike)):
        return open(target, mode), True
    return target, False


def encode_pianoroll(roll: PianoRoll) -> bytes:
    problems = validate(roll)
    if problems:
        raise FormatError("cannot encode invalid roll: " + "; ".join(problems))
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<B4I", VERSION, *roll.cells.shape))
    for name in roll.tracks:
        raw = name.encode("utf-8")
        out.write(struct.pack("<H", len(raw)))
        out.write(raw)
    out.write(np.packbits(roll.cells.astype(np.uint8).ravel()).tobytes())
    return out.getvalue()


def decode_pianoroll(blob: bytes) -> PianoRoll:
    view = memoryview(blob)
    if len(view) < 21 or bytes(view[:4]) != MAGIC:
        raise FormatError("not a PGBN stream (bad magic)")
    version, bars, steps, pitches, tracks = struct.unpack_from("<B4I", view, 4)
    if version != VERSION:
        raise FormatError(f"unsupported PGBN version {version}")
    if min(bars, steps, pitches, tracks) < 1:
        raise FormatError(f"invalid dims {(bars, steps, pitches, tracks)}")
    pos = 21
    names = []
    for _ in range(tracks):
        if pos + 2 > len(view):
            raise FormatError("truncated track-name table")
        (length,) = struct.unpack_from("<H", view, pos)
        pos += 2
        if pos + length > len(view):
            raise FormatError("truncated track-name table")
        try:
            names.append(bytes(view[pos : pos + length]).decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise FormatError(f"track name is not UTF-8: {exc}") from None
        pos += length
    count = bars * steps * pitches * tracks
    nbytes = math.ceil(count / 8)
    if len(view) - pos != nbytes:
        raise FormatError(f"payload is {len(view) - pos} bytes, expected {nbytes}")
    bits = np.unpackbits(np.frombuffer(view[pos:], dtype=np.uint8), count=count)
    return PianoRoll(bits.reshape(bars, steps, pitches, tracks), tuple(names))


def save_pianoroll(roll: PianoRoll, sink: Union[str, os.PathLike, BinaryIO]) -> None:
    blob = encode_pianoroll(roll)
    fh, owned = _open(sink, "wb")
    try:
        fh.write(blob)
    finally:
        if owned:
            fh.close()


def load_pianoroll(source: Union[str, os.PathLike, BinaryIO]) -> PianoRoll:
    fh, owned = _open(source, "rb")
    try:
        blob = fh.read()
    finally:
        if owned:
            fh.close()
    return decode_pianoroll(blob)


def load_dataset(path: Union[str, os.PathLike]) -> Dataset:
    """Load every ``*.pgbn`` file in a directory (sorted by name), or a single file."""
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.pgbn"))
        if not files:
            raise FileNotFoundError(f"no .pgbn files in {path}")
    elif path.is_file():
        files = [path]
    else:
        raise FileNotFoundError(f"dataset path {path} does not exist")
    return Dataset([load_pianoroll(f) for f in files], provenance=str(path))


def _pool(cells: np.ndarray, time_steps: int, pitch_values: int) -> np.ndarray:
    steps, pitches = cells.shape[-3], cells.shape[-2]
    if time_steps < 1 or pitch_values < 1 or steps % time_steps or pitches % pitch_values:
        raise ConfigurationError(
            f"cannot pool ({steps}, {pitches}) down to ({time_steps}, {pitch_values})"
        )
    lead = cells.shape[:-3]
    tw, pw = steps // time_steps, pitches // pitch_values
    view = cells.reshape(lead + (time_steps, tw, pitch_values, pw, cells.shape[-1]))
    axes = (len(lead) + 1, len(lead) + 3)
    return view.max(axis=axes)


def downsample_to_phase(roll: PianoRoll, time_steps: int, pitch_values: int) -> PianoRoll:
    """Logical-OR pool each (time window x pitch window) block down to one cell."""
    return PianoRoll(_pool(np.asarray(roll.cells), time_steps, pitch_values), roll.tracks)


def downsample_array(batch: np.ndarray, time_steps: int, pitch_values: int) -> np.ndarray:
    """OR-pool a stacked ``(count, bars, steps, pitches, tracks)`` array."""
    return _pool(batch, time_steps, pitch_values)


def _divisors(n: int) -> list:
    return [d for d in range(1, n + 1) if n % d == 0]


def synth_dataset(count: int, shape=(4, 96, 84, 8), seed: int = 0, style: str = "patterns",
                  track_names=None) -> Dataset:
    """Deterministic toy corpus with per-track repeating rhythms and small chords.

    Each track holds a chord of ``lo..hi`` pitches (``lo = ceil(0.02 P)``,
    ``hi = min(4, floor(0.3 P))``) for at least half of every rhythmic
    period, so note density stays inside [1%, 30%] for ``P >= 4`` pitches.
    """
    if count < 1:
        raise ConfigurationError("count must be >= 1")
    if style != "patterns":
        raise ConfigurationError(f"unknown synthetic style {style!r}")
    bars, steps, pitches, tracks = shape
    names = tuple(track_names) if track_names else (
        DEFAULT_TRACK_NAMES[:tracks] + tuple(f"Track {i}" for i in range(8, tracks))
    )
    lo = max(1, math.ceil(0.02 * pitches))
    hi = max(lo, min(4, int(0.3 * pitches)))
    periods = [d for d in _divisors(steps) if d >= 2] or [1]
    rng = np.random.default_rng(seed)
    rolls = []
    for _ in range(count):
        cells = np.zeros(shape, dtype=np.uint8)
        for t in range(tracks):
            period = int(rng.choice(periods))
            length = int(rng.integers(math.ceil(period / 2), period + 1))
            offset = int(rng.integers(0, period))
            voices = int(rng.integers(lo, hi + 1))
            base = rng.choice(pitches, size=voices, replace=False)
            active = ((np.arange(steps) - offset) % period) < length
            for b in range(bars):
                shift = int(rng.integers(-2, 3)) if pitches > 4 else 0
                chord = np.unique((base + shift) % pitches)
                cells[b][np.ix_(active, chord, [t])] = 1
        rolls.append(PianoRoll(cells, names))
    return Dataset(rolls, provenance=f"synthetic:{style}:seed={seed}")


def _note_spans(column: np.ndarray):
    """Yield ``(start, end)`` of runs of ones in a 1-D 0/1 array."""
    padded = np.concatenate([[0], column.astype(np.int8), [0]])
    diff = np.diff(padded)
    return zip(np.flatnonzero(diff == 1), np.flatnonzero(diff == -1))


def roll_to_midi(roll: PianoRoll, tempo_bpm: float = 120.0, velocity: int = 100) -> mido.MidiFile:
    """Build a type-1 MIDI file with one track per roll track (one tick per step).

    The bar axis is flattened into one time line, so notes held across a bar
    line merge into a single note.
    """
    cells = np.asarray(roll.cells)
    bars, steps, pitches, tracks = cells.shape
    if LOWEST_MIDI_PITCH + pitches > 128:
        raise ConfigurationError(f"{pitches} pitches do not fit in the MIDI range")
    timeline = cells.reshape(bars * steps, pitches, tracks)
    mid = mido.MidiFile(type=1, ticks_per_beat=STEPS_PER_BEAT)
    melodic = iter(c for c in range(16) if c != DRUM_CHANNEL)
    for t, name in enumerate(roll.tracks):
        is_drum = name.lower() == "drums"
        channel = DRUM_CHANNEL if is_drum else next(melodic, 0)
        track = mido.MidiTrack()
        track.append(mido.MetaMessage("track_name", name=name, time=0))
        if t == 0:
            track.append(mido.MetaMessage("set_tempo", tempo=mido.bpm2tempo(tempo_bpm), time=0))
            track.append(mido.MetaMessage("time_signature", numerator=BEATS_PER_BAR, denominator=4, time=0))
        if not is_drum:
            program = GM_PROGRAMS.get(name, 0)
            track.append(mido.Message("program_change", channel=channel, program=program, time=0))
        events = []
        for p in range(pitches):
            for start, end in _note_spans(timeline[:, p, t]):
                note = LOWEST_MIDI_PITCH + p
                events.append((int(end), 0, note))
                events.append((int(start), 1, note))
        events.sort()  # offs before ons at equal ticks
        now = 0
        for tick, is_on, note in events:
            kind = "note_on" if is_on else "note_off"
            track.append(mido.Message(kind, channel=channel, note=note, velocity=velocity if is_on else 0,
                                      time=tick - now))
            now = tick
        track.append(mido.MetaMessage("end_of_track", time=0))
        mid.tracks.append(track)
    return mid


def export_midi(roll: PianoRoll, tempo_bpm: float = 120.0, sink=None):
    """Write ``roll`` as a standard MIDI file to a path or binary file object."""
    mid = roll_to_midi(roll, tempo_bpm)
    if sink is None:
        return mid
    if isinstance(sink, (str, os.PathLike)):
        mid.save(filename=os.fspath(sink))
    else:
        mid.save(file=sink)
    return mid
