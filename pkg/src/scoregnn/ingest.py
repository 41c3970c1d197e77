"""Tabular note/label ingestion, the task schema, and corpus splits.

File formats (UTF-8, tab separated, one header row):

* ``notes.tsv``: piece_id, note_id, onset, duration, pitch_step, pitch_alter,
  octave, voice, staff, measure_number, beat_in_measure, ts_numerator,
  ts_denominator.  Rationals are written ``n/d`` or as plain integers.
* ``labels.tsv``: piece_id, note_id, task, value.
* schema file: ``name<TAB>level<TAB>metric<TAB>class,class,...[<TAB>flags]``
  where flags is a comma separated subset of ``nct`` and ``aux``.
* split file: ``piece_id<TAB>train|valid|test``, no header.
"""

from __future__ import annotations

import csv
import re
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from pathlib import Path

import numpy as np

from . import pitch

NOTE_COLUMNS = (
    "piece_id", "note_id", "onset", "duration", "pitch_step", "pitch_alter", "octave",
    "voice", "staff", "measure_number", "beat_in_measure", "ts_numerator", "ts_denominator",
)
LABEL_COLUMNS = ("piece_id", "note_id", "task", "value")
LEVELS = ("note", "onset", "segment")
METRICS = ("macro_f1", "accuracy", "csr_component")
TS_DENOMINATORS = (1, 2, 4, 8, 16, 32)
SPLIT_NAMES = ("train", "valid", "test")
MISSING = -1

_RATIONAL = re.compile(r"^-?\d+(/\d+)?$")


class IngestError(ValueError):
    """Malformed input table; ``line`` is the 1-based physical line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class BadHeader(IngestError):
    pass


class MalformedRational(IngestError):
    pass


class MalformedField(IngestError):
    pass


class UnknownPitchStep(IngestError):
    pass


class DuplicateNoteId(IngestError):
    pass


class NonPositiveDuration(IngestError):
    pass


class UnknownNoteReference(IngestError):
    pass


class UnknownTask(IngestError):
    pass


class SplitError(IngestError):
    pass


@dataclass(frozen=True, order=False)
class NoteEvent:
    piece_id: str
    note_id: int
    onset: Fraction
    duration: Fraction
    pitch_step: str
    pitch_alter: int
    octave: int
    voice: int = 0
    staff: int = 0
    measure_number: int = 0
    beat_in_measure: Fraction = Fraction(0)
    ts_numerator: int = 4
    ts_denominator: int = 4

    def __post_init__(self):
        problem = _note_problem(self)
        if problem is not None:
            raise problem[0](problem[1])

    @property
    def offset(self) -> Fraction:
        return self.onset + self.duration

    @property
    def midi(self) -> int:
        return pitch.midi_pitch(self.pitch_step, self.pitch_alter, self.octave)


def _note_problem(n: NoteEvent):
    if n.pitch_step not in pitch.STEP_SEMITONE:
        return UnknownPitchStep, f"unknown pitch_step {n.pitch_step!r}"
    if n.duration <= 0:
        return NonPositiveDuration, f"duration {n.duration} must be > 0"
    if not -2 <= n.pitch_alter <= 2:
        return MalformedField, f"pitch_alter {n.pitch_alter} outside [-2, 2]"
    if not 0 <= n.octave <= 9:
        return MalformedField, f"octave {n.octave} outside [0, 9]"
    if not 0 <= pitch.midi_pitch(n.pitch_step, n.pitch_alter, n.octave) <= 127:
        return MalformedField, "chromatic pitch outside [0, 127]"
    if min(n.voice, n.staff, n.measure_number) < 0:
        return MalformedField, "voice, staff and measure_number must be >= 0"
    if n.beat_in_measure < 0:
        return MalformedField, "beat_in_measure must be >= 0"
    if n.ts_numerator < 1 or n.ts_denominator not in TS_DENOMINATORS:
        return MalformedField, f"bad time signature {n.ts_numerator}/{n.ts_denominator}"
    return None


def note_sort_key(n: NoteEvent):
    return (n.piece_id, n.onset, n.midi, n.note_id)


def _rational(text: str, line: int, column: str) -> Fraction:
    text = text.strip()
    if not _RATIONAL.match(text):
        raise MalformedRational(f"malformed rational {text!r} in column {column}", line)
    try:
        return Fraction(text)
    except ZeroDivisionError:
        raise MalformedRational(f"zero denominator in column {column}", line) from None


def _integer(text: str, line: int, column: str) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise MalformedField(f"malformed integer {text!r} in column {column}", line) from None


def _read_rows(path, expected):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != expected:
            raise BadHeader(f"{path}: expected header {'/'.join(expected)}", 1)
        for row in reader:
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(expected):
                raise MalformedField(f"expected {len(expected)} fields, got {len(row)}", reader.line_num)
            yield reader.line_num, row


def parse_note_table(path) -> list[NoteEvent]:
    """Read ``notes.tsv``; rows come back sorted by (piece, onset, pitch, note_id)."""
    notes = []
    seen = set()
    for line, row in _read_rows(path, NOTE_COLUMNS):
        rec = dict(zip(NOTE_COLUMNS, row))
        piece = rec["piece_id"].strip()
        note_id = _integer(rec["note_id"], line, "note_id")
        if (piece, note_id) in seen:
            raise DuplicateNoteId(f"duplicate note id ({piece}, {note_id})", line)
        seen.add((piece, note_id))
        step = rec["pitch_step"].strip()
        if step not in pitch.STEP_SEMITONE:
            raise UnknownPitchStep(f"unknown pitch_step {step!r}", line)
        values = dict(
            piece_id=piece,
            note_id=note_id,
            onset=_rational(rec["onset"], line, "onset"),
            duration=_rational(rec["duration"], line, "duration"),
            pitch_step=step,
            pitch_alter=_integer(rec["pitch_alter"], line, "pitch_alter"),
            octave=_integer(rec["octave"], line, "octave"),
            voice=_integer(rec["voice"], line, "voice"),
            staff=_integer(rec["staff"], line, "staff"),
            measure_number=_integer(rec["measure_number"], line, "measure_number"),
            beat_in_measure=_rational(rec["beat_in_measure"], line, "beat_in_measure"),
            ts_numerator=_integer(rec["ts_numerator"], line, "ts_numerator"),
            ts_denominator=_integer(rec["ts_denominator"], line, "ts_denominator"),
        )
        try:
            notes.append(NoteEvent(**values))
        except IngestError as err:
            raise type(err)(str(err), line) from None
    notes.sort(key=note_sort_key)
    return notes


def write_note_table(notes, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(NOTE_COLUMNS)
        for n in notes:
            writer.writerow([
                n.piece_id, n.note_id, n.onset, n.duration, n.pitch_step, n.pitch_alter, n.octave,
                n.voice, n.staff, n.measure_number, n.beat_in_measure, n.ts_numerator,
                n.ts_denominator,
            ])


def group_by_piece(notes) -> dict[str, list[NoteEvent]]:
    pieces: dict[str, list[NoteEvent]] = {}
    for n in notes:
        pieces.setdefault(n.piece_id, []).append(n)
    return pieces


# ----------------------------------------------------------------------------
# Task schema
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class TaskSpec:
    name: str
    classes: tuple[str, ...]
    level: str = "note"
    metric: str = "macro_f1"
    is_nct: bool = False
    aux: bool = False

    def __post_init__(self):
        if len(self.classes) < 2:
            raise ValueError(f"task {self.name}: need at least two classes")
        if len(set(self.classes)) != len(self.classes):
            raise ValueError(f"task {self.name}: duplicate class names")
        if self.level not in LEVELS:
            raise ValueError(f"task {self.name}: unknown level {self.level!r}")
        if self.metric not in METRICS:
            raise ValueError(f"task {self.name}: unknown metric {self.metric!r}")

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def index(self, value: str) -> int:
        """Class index of ``value``, or MISSING when it is not in the vocabulary."""
        return self._lookup.get(value, MISSING)

    @cached_property
    def _lookup(self) -> dict[str, int]:
        return {c: i for i, c in enumerate(self.classes)}


@dataclass(frozen=True)
class TaskSchema:
    tasks: tuple[TaskSpec, ...]

    def __post_init__(self):
        names = [t.name for t in self.tasks]
        if len(set(names)) != len(names):
            raise ValueError("task names must be unique")
        if not self.tasks:
            raise ValueError("schema needs at least one task")
        if sum(t.is_nct for t in self.tasks) > 1:
            raise ValueError("at most one task may be the non-chord-tone task")

    def __len__(self):
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    def __getitem__(self, name: str) -> TaskSpec:
        for t in self.tasks:
            if t.name == name:
                return t
        raise KeyError(name)

    def __contains__(self, name) -> bool:
        return any(t.name == name for t in self.tasks)

    @property
    def names(self) -> list[str]:
        return [t.name for t in self.tasks]

    @property
    def nct_task(self) -> TaskSpec | None:
        return next((t for t in self.tasks if t.is_nct), None)

    def without_aux(self) -> "TaskSchema":
        return TaskSchema(tuple(t for t in self.tasks if not t.aux))

    def to_lines(self) -> list[str]:
        lines = []
        for t in self.tasks:
            flags = [f for f, on in (("nct", t.is_nct), ("aux", t.aux)) if on]
            lines.append("\t".join([t.name, t.level, t.metric, ",".join(t.classes), ",".join(flags)]))
        return lines


def _roman_numerals() -> list[str]:
    return [
        "I", "ii", "iii", "IV", "V", "vi", "viio", "i", "iio", "III", "iv", "v", "VI", "VII",
        "V7", "ii7", "IV7", "vi7", "viio7", "viiø7", "iiø7", "I7", "V/V", "V7/V", "viio7/V",
        "V/ii", "V/vi", "V/IV", "N", "Ger", "It", "other",
    ]


def _pcset_vocabulary() -> list[str]:
    shapes = [(0, 4, 7), (0, 3, 7), (0, 3, 6), (0, 4, 7, 10), (0, 3, 7, 10)]
    sets = [pitch.pcset_name(r + i for i in s) for s in shapes for r in range(12)]
    sets += [pitch.pcset_name(r + i for i in (0, 3, 6, 9)) for r in range(3)]
    return sets + ["other"]


HARMONIC_RHYTHM_CLASSES = ("1/2", "1", "3/2", "2", "3", "4", "other")
QUALITIES = ("M", "m", "d", "a", "M7", "m7", "D7", "d7", "hd7", "a6", "sus")
CADENCE_CLASSES = ("none", "PAC", "IAC", "HC", "DC", "EV")
DEGREES = tuple(p + str(d) for p in ("", "#", "b") for d in range(1, 8))


def default_schema() -> TaskSchema:
    """The 20-task schema with default vocabularies."""
    keys = tuple(pitch.key_vocabulary())
    spelled = tuple(pitch.spelled_vocabulary())
    no_yes = ("no", "yes")
    T = TaskSpec
    return TaskSchema((
        T("cadence", CADENCE_CLASSES, "onset", "macro_f1"),
        T("phrase", ("none", "boundary"), "onset", "macro_f1"),
        T("section", ("none", "boundary"), "onset", "macro_f1"),
        T("pedal", ("none", "pedal"), "note", "macro_f1"),
        T("metrical_strength", ("0", "1", "2", "3"), "onset", "accuracy"),
        T("harmony_change", ("none", "change"), "onset", "macro_f1"),
        T("local_key", keys, "segment", "csr_component"),
        T("tonicization", keys, "segment", "accuracy"),
        T("root", spelled, "segment", "accuracy"),
        T("bass", spelled, "segment", "accuracy"),
        T("harmonic_rhythm", HARMONIC_RHYTHM_CLASSES, "segment", "accuracy"),
        T("inversion", ("0", "1", "2", "3"), "segment", "csr_component"),
        T("quality", QUALITIES, "segment", "csr_component"),
        T("pcset", tuple(_pcset_vocabulary()), "segment", "accuracy"),
        T("romanNumeral", tuple(_roman_numerals()), "segment", "accuracy"),
        T("degree", DEGREES, "segment", "csr_component"),
        T("nct", ("chord_tone", "non_chord_tone"), "note", "macro_f1", is_nct=True, aux=True),
        T("note_is_root", no_yes, "note", "macro_f1", aux=True),
        T("note_is_bass", no_yes, "note", "macro_f1", aux=True),
        T("note_in_chord", no_yes, "note", "macro_f1", aux=True),
    ))


def write_schema(schema: TaskSchema, path) -> None:
    text = "# name\tlevel\tmetric\tclasses\tflags\n" + "\n".join(schema.to_lines()) + "\n"
    Path(path).write_text(text, encoding="utf-8")


def read_schema(path) -> TaskSchema:
    tasks = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not raw.strip() or raw.lstrip().startswith("#"):
            continue
        parts = raw.split("\t")
        if len(parts) not in (4, 5):
            raise MalformedField("schema line needs 4 or 5 tab separated fields", lineno)
        name, level, metric, classes = (p.strip() for p in parts[:4])
        flags = {f.strip() for f in parts[4].split(",")} - {""} if len(parts) == 5 else set()
        if flags - {"nct", "aux"}:
            raise MalformedField(f"unknown flags {sorted(flags - {'nct', 'aux'})}", lineno)
        try:
            tasks.append(TaskSpec(name, tuple(c.strip() for c in classes.split(",")), level, metric,
                                  is_nct="nct" in flags, aux="aux" in flags))
        except ValueError as err:
            raise MalformedField(str(err), lineno) from None
    return TaskSchema(tuple(tasks))


# ----------------------------------------------------------------------------
# Labels
# ----------------------------------------------------------------------------


@dataclass
class LabelFrame:
    """Per-task class indices for one piece, aligned with its sorted notes."""

    piece_id: str
    note_ids: np.ndarray
    labels: dict[str, np.ndarray] = field(default_factory=dict)
    mask: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_notes(self) -> int:
        return len(self.note_ids)

    @classmethod
    def empty(cls, piece_id: str, note_ids, schema: TaskSchema) -> "LabelFrame":
        n = len(note_ids)
        return cls(
            piece_id,
            np.asarray(note_ids, dtype=np.int64),
            {t.name: np.full(n, MISSING, dtype=np.int64) for t in schema},
            {t.name: np.zeros(n, dtype=bool) for t in schema},
        )

    def take(self, index) -> "LabelFrame":
        index = np.asarray(index, dtype=np.int64)
        return LabelFrame(
            self.piece_id,
            self.note_ids[index],
            {k: v[index] for k, v in self.labels.items()},
            {k: v[index] for k, v in self.mask.items()},
        )

    def set(self, task: TaskSpec, position: int, value: str) -> None:
        idx = task.index(value)
        self.labels[task.name][position] = idx
        self.mask[task.name][position] = idx != MISSING


def parse_label_table(path, schema: TaskSchema, notes) -> dict[str, LabelFrame]:
    """Read ``labels.tsv`` into one LabelFrame per piece of ``notes``.

    Values outside a task's vocabulary, and conflicting duplicate rows, are
    masked instead of raising.
    """
    by_piece = group_by_piece(notes)
    frames = {}
    position = {}
    for piece, piece_notes in by_piece.items():
        ids = [n.note_id for n in piece_notes]
        frames[piece] = LabelFrame.empty(piece, ids, schema)
        for i, nid in enumerate(ids):
            position[(piece, nid)] = i
    seen: dict[tuple, str] = {}
    conflicted: set = set()
    for line, (piece, note_id, task_name, value) in _read_rows(path, LABEL_COLUMNS):
        piece = piece.strip()
        nid = _integer(note_id, line, "note_id")
        key = (piece, nid)
        if key not in position:
            raise UnknownNoteReference(f"label refers to unknown note ({piece}, {nid})", line)
        task_name = task_name.strip()
        if task_name not in schema:
            raise UnknownTask(f"unknown task {task_name!r}", line)
        task = schema[task_name]
        value = value.strip()
        frame, pos = frames[piece], position[key]
        entry = (piece, nid, task_name)
        if entry in conflicted:
            continue
        prior = seen.get(entry)
        if prior is not None and prior != value:
            conflicted.add(entry)
            frame.labels[task_name][pos] = MISSING
            frame.mask[task_name][pos] = False
            continue
        seen[entry] = value
        frame.set(task, pos, value)
    return frames


def write_label_table(frames, schema: TaskSchema, path) -> None:
    """Write mask-true entries of ``frames`` (dict or iterable of LabelFrame)."""
    if isinstance(frames, dict):
        frames = frames.values()
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(LABEL_COLUMNS)
        for frame in frames:
            for i, nid in enumerate(frame.note_ids):
                for task in schema:
                    if frame.mask[task.name][i]:
                        writer.writerow([frame.piece_id, int(nid), task.name,
                                         task.classes[frame.labels[task.name][i]]])


# ----------------------------------------------------------------------------
# Splits
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class CorpusSplit:
    train: frozenset
    valid: frozenset
    test: frozenset
    seed: int | None = None

    def of(self, piece_id: str) -> str:
        for name in SPLIT_NAMES:
            if piece_id in getattr(self, name):
                return name
        raise KeyError(piece_id)


def read_split_file(path) -> dict[str, str]:
    assignment = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not raw.strip() or raw.startswith("#"):
            continue
        parts = raw.split("\t")
        if len(parts) != 2 or parts[1].strip() not in SPLIT_NAMES:
            raise SplitError("expected piece_id<TAB>train|valid|test", lineno)
        assignment[parts[0].strip()] = parts[1].strip()
    return assignment


def write_split_file(split: CorpusSplit, path) -> None:
    rows = sorted((p, name) for name in SPLIT_NAMES for p in getattr(split, name))
    Path(path).write_text("".join(f"{p}\t{s}\n" for p, s in rows), encoding="utf-8")


def make_split(pieces, seed: int, explicit=None, test_fraction: float = 0.2,
               valid_fraction: float = 0.1) -> CorpusSplit:
    """Partition ``pieces`` into train/valid/test.

    ``explicit`` is a split file path or a piece -> split mapping; it wins over
    the random split.  Unlisted pieces go to train.
    """
    pieces = sorted(set(pieces))
    if explicit is not None:
        assignment = explicit if isinstance(explicit, dict) else read_split_file(explicit)
        unknown = sorted(set(assignment) - set(pieces))
        if unknown:
            raise SplitError(f"split file lists unknown pieces: {', '.join(unknown[:5])}")
        unlisted = [p for p in pieces if p not in assignment]
        if unlisted:
            warnings.warn(f"{len(unlisted)} pieces missing from split file, assigned to train")
        groups = {name: frozenset(p for p in pieces if assignment.get(p, "train") == name)
                  for name in SPLIT_NAMES}
        for name in ("valid", "test"):
            if not groups[name]:
                warnings.warn(f"explicit split leaves the {name} set empty")
        return CorpusSplit(groups["train"], groups["valid"], groups["test"], seed)
    if len(pieces) < 5:
        raise SplitError(f"random split needs at least 5 pieces, got {len(pieces)}")
    order = np.random.default_rng(seed).permutation(len(pieces))
    shuffled = [pieces[i] for i in order]
    n_test = int(len(pieces) * test_fraction + 0.5)
    n_valid = max(1, int(len(pieces) * valid_fraction + 0.5))
    return CorpusSplit(
        frozenset(shuffled[n_test + n_valid:]),
        frozenset(shuffled[n_test:n_test + n_valid]),
        frozenset(shuffled[:n_test]),
        seed,
    )
