"""Seeded toy corpora: diatonic chord progressions labelled by construction.

Each piece is a sequence of four-bar phrases in 4/4 or 3/4.  Chords are
voiced as a bass plus three close-position upper voices; a leap of a third
in an upper voice is often filled with a passing tone (the only non-chord
tones generated).  Phrases end in a cadence, the second section may move to the
dominant (or relative major), and some phrases open over a tonic pedal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import pitch
from .ingest import (
    LabelFrame, NoteEvent, TaskSchema, default_schema, make_split, note_sort_key,
    write_label_table, write_note_table, write_schema, write_split_file,
)

MAJOR_SCALE = (0, 2, 4, 5, 7, 9, 11)
MINOR_SCALE = (0, 2, 3, 5, 7, 8, 10)

# numeral -> (root degree 0..6, seventh?, raise leading tone?, tonicized?)
MAJOR_CHORDS = {
    "I": (0, False, False, False), "ii": (1, False, False, False), "iii": (2, False, False, False),
    "IV": (3, False, False, False), "V": (4, False, False, False), "vi": (5, False, False, False),
    "viio": (6, False, False, False), "V7": (4, True, False, False), "ii7": (1, True, False, False),
    "V/V": (4, False, False, True), "V7/V": (4, True, False, True),
}
MINOR_CHORDS = {
    "i": (0, False, False, False), "iio": (1, False, False, False), "III": (2, False, False, False),
    "iv": (3, False, False, False), "V": (4, False, True, False), "VI": (5, False, False, False),
    "viio7": (6, True, True, False), "V7": (4, True, True, False),
}
MAJOR_NEXT = {
    "I": ("ii", "IV", "V", "vi", "iii", "V/V", "ii7"), "ii": ("V", "V7", "viio"), "ii7": ("V", "V7"),
    "iii": ("vi", "IV"), "IV": ("V", "I", "ii", "V/V"), "V": ("I", "vi", "V7"), "V7": ("I", "vi"),
    "vi": ("ii", "IV", "V/V"), "viio": ("I",), "V/V": ("V", "V7"), "V7/V": ("V",),
}
MINOR_NEXT = {
    "i": ("iio", "iv", "V", "VI", "III"), "iio": ("V", "V7"), "III": ("VI", "iv"),
    "iv": ("V", "i", "viio7"), "V": ("i", "VI"), "V7": ("i",), "VI": ("iio", "iv"), "viio7": ("i",),
}
QUALITY_BY_INTERVALS = {
    (4, 7): "M", (3, 7): "m", (3, 6): "d", (4, 8): "a",
    (4, 7, 10): "D7", (4, 7, 11): "M7", (3, 7, 10): "m7", (3, 6, 10): "hd7", (3, 6, 9): "d7",
}


@dataclass
class Key:
    step: str
    alter: int
    major: bool

    @property
    def name(self) -> str:
        return pitch.key_name(self.step, self.alter, self.major)

    @property
    def pc(self) -> int:
        return pitch.pitch_class(self.step, self.alter)

    def degree(self, k: int, raised: bool = False) -> tuple[str, int]:
        """Spelled scale degree k (0-based, may exceed 6)."""
        scale = MAJOR_SCALE if self.major else MINOR_SCALE
        step = pitch.STEPS[(pitch.STEPS.index(self.step) + k) % 7]
        target = (self.pc + scale[k % 7] + (1 if raised and k % 7 == 6 else 0)) % 12
        alter = (target - pitch.STEP_SEMITONE[step] + 6) % 12 - 6
        return step, alter

    def dominant(self) -> "Key":
        step, alter = self.degree(4) if self.major else self.degree(2)
        return Key(step, alter, True)


@dataclass
class Chord:
    numeral: str
    key: Key
    tones: list
    inversion: int
    onset: Fraction
    duration: Fraction
    tonicized: Key | None = None

    @property
    def root(self):
        return self.tones[0]

    @property
    def bass(self):
        return self.tones[self.inversion]

    @property
    def pcs(self) -> set:
        return {pitch.pitch_class(s, a) for s, a in self.tones}

    @property
    def quality(self) -> str:
        r = pitch.pitch_class(*self.root)
        ivs = tuple((pitch.pitch_class(s, a) - r) % 12 for s, a in self.tones[1:])
        return QUALITY_BY_INTERVALS.get(ivs, "sus")

    @property
    def degree(self) -> str:
        """Root degree relative to the local key, with accidental vs. its natural scale."""
        step, alter = self.root
        k = (pitch.STEPS.index(step) - pitch.STEPS.index(self.key.step)) % 7
        diatonic = self.key.degree(k)
        diff = (pitch.pitch_class(step, alter) - pitch.pitch_class(*diatonic) + 6) % 12 - 6
        return {0: "", 1: "#", -1: "b"}.get(diff, "") + str(k + 1)


def spell_chord(numeral: str, key: Key) -> tuple[list, Key | None]:
    table = MAJOR_CHORDS if key.major else MINOR_CHORDS
    root, seventh, raised, tonicized = table[numeral]
    home = key.dominant() if tonicized else key
    if tonicized:
        root = 4
    idx = (0, 2, 4, 6) if seventh else (0, 2, 4)
    tones = [home.degree(root + i, raised=raised) for i in idx]
    return tones, (home if tonicized else None)


def _place(step: str, alter: int, low: int) -> tuple[str, int, int]:
    for octave in range(0, 9):
        if low <= pitch.midi_pitch(step, alter, octave) < low + 12:
            return step, alter, octave
    raise AssertionError("unreachable")


@dataclass
class SyntheticCorpus:
    notes: list
    frames: dict
    schema: TaskSchema
    meta: dict = field(default_factory=dict)

    @property
    def pieces(self) -> list:
        return sorted(self.frames)

    def notes_by_piece(self) -> dict:
        out = {}
        for n in self.notes:
            out.setdefault(n.piece_id, []).append(n)
        return out

    def write(self, out_dir, split_seed: int = 0) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"notes": out / "notes.tsv", "labels": out / "labels.tsv",
                 "schema": out / "schema.tsv", "split": out / "split.tsv"}
        write_note_table(self.notes, paths["notes"])
        write_label_table(self.frames, self.schema, paths["labels"])
        write_schema(self.schema, paths["schema"])
        if len(self.pieces) >= 5:
            write_split_file(make_split(self.pieces, split_seed), paths["split"])
        else:
            paths["split"].write_text("".join(f"{p}\ttrain\n" for p in self.pieces), encoding="utf-8")
        return paths


class _PieceBuilder:
    def __init__(self, piece_id: str, rng, key: Key, numerator: int):
        self.piece_id = piece_id
        self.rng = rng
        self.home = key
        self.num = numerator
        self.records = []  # (fields dict, labels dict)
        self.t = Fraction(0)
        self.measure = 1

    def choose(self, options):
        return options[int(self.rng.integers(len(options)))]

    def measure_rhythm(self, last: bool) -> list:
        if last:
            first = self.choose([1, 2]) if self.num == 4 else 1
            return [Fraction(first), Fraction(self.num - first)]
        parts, left = [], self.num
        while left:
            d = 1 if left == 1 else self.choose([1, 2])
            parts.append(Fraction(d))
            left -= d
        return parts

    def phrase(self, key: Key, phrase_start: bool, section_start: bool, pedal: bool):
        nxt = MAJOR_NEXT if key.major else MINOR_NEXT
        tonic = "I" if key.major else "i"
        chords = []
        current = tonic
        for m in range(4):
            rhythm = self.measure_rhythm(last=(m == 3))
            if m < 3:
                for d in rhythm:
                    chords.append((current, d, m))
                    current = self.choose(nxt[current])
            else:
                kind = self.choose(["authentic", "authentic", "half", "deceptive", "evaded"])
                pre = {"authentic": ("V", "V7"), "deceptive": ("V", "V7"), "evaded": ("V7",),
                       "half": ("IV", "ii") if key.major else ("iv", "iio")}[kind]
                final = {"authentic": tonic, "half": "V", "evaded": tonic,
                         "deceptive": "vi" if key.major else "VI"}[kind]
                chords.append((self.choose(pre), rhythm[0], m))
                chords.append((final, rhythm[1], m, kind))
        built = []
        for i, item in enumerate(chords):
            numeral, dur, m = item[:3]
            cadence = item[3] if len(item) > 3 else None
            tones, tonicized = spell_chord(numeral, key)
            if cadence == "evaded":
                inversion = 1
            elif cadence is not None or i >= len(chords) - 2:
                inversion = 0
            else:
                inversion = int(self.rng.choice([0, 0, 0, 1, 1, 2])) if len(tones) == 3 else int(
                    self.rng.choice([0, 1, 2, 3]))
            chord = Chord(numeral, key, tones, inversion, self.t, dur, tonicized)
            built.append((chord, m, cadence))
            self.t += dur
        self._emit(built, key, phrase_start, section_start, pedal)

    def _emit(self, built, key, phrase_start, section_start, pedal):
        measure0 = self.measure
        for ci, (chord, m, cadence) in enumerate(built):
            measure = measure0 + m
            measure_start = Fraction((measure - 1) * self.num)
            bass = _place(*chord.bass, low=40)
            if pedal and m < 2:
                bass = _place(key.step, key.alter, low=40)
            upper = self._voice_upper(chord)
            nxt = built[ci + 1][0] if ci + 1 < len(built) else None
            passing = {}
            if nxt is not None and chord.duration >= 1:
                for v, (here, there) in enumerate(zip(upper, self._voice_upper(nxt))):
                    a_idx = here[2] * 7 + pitch.STEPS.index(here[0])
                    b_idx = there[2] * 7 + pitch.STEPS.index(there[0])
                    if abs(a_idx - b_idx) == 2 and self.rng.random() < 0.8:
                        mid = (a_idx + b_idx) // 2
                        k = (mid % 7 - pitch.STEPS.index(key.step)) % 7
                        s, alter = key.degree(k)
                        passing[v + 1] = (s, alter, mid // 7)
            half = chord.duration / 2
            for voice, p in enumerate([bass] + upper):
                dur = half if voice in passing else chord.duration
                self._note(p, chord.onset, dur, voice, measure, measure_start, chord, key,
                           cadence, phrase_start and ci == 0, section_start and ci == 0,
                           pedal_note=(pedal and m < 2 and voice == 0), passing=False)
            for voice, p in passing.items():
                self._note(p, chord.onset + half, half, voice, measure, measure_start,
                           chord, key, None, False, False, pedal_note=False, passing=True)
        self.measure = measure0 + 4

    @staticmethod
    def _voice_upper(chord: Chord) -> list:
        """Three close-position upper voices, lowest first."""
        tones = chord.tones if len(chord.tones) == 3 else [
            t for i, t in enumerate(chord.tones) if i != chord.inversion]
        return sorted((_place(s, a, low=60) for s, a in tones), key=lambda p: pitch.midi_pitch(*p))

    def _note(self, p, onset, dur, voice, measure, measure_start, chord, key, cadence,
              phrase_boundary, section_boundary, pedal_note, passing):
        step, alter, octave = p
        beat = onset - measure_start
        if beat == 0:
            strength = "3"
        elif self.num == 4 and beat == 2:
            strength = "2"
        elif beat.denominator == 1:
            strength = "1"
        else:
            strength = "0"
        pc = pitch.pitch_class(step, alter)
        at_chord_onset = onset == chord.onset
        label_cadence = "none"
        if cadence is not None and at_chord_onset:
            # Authentic cadences are split into PAC/IAC by resolve_authentic.
            label_cadence = {"authentic": "authentic", "half": "HC", "deceptive": "DC",
                             "evaded": "EV"}[cadence]
        local = key.name
        rn = chord.numeral if chord.numeral in _RN_VOCAB else "other"
        pcs = pitch.pcset_name(chord.pcs)
        labels = {
            "cadence": label_cadence,
            "phrase": "boundary" if phrase_boundary else "none",
            "section": "boundary" if section_boundary else "none",
            "pedal": "pedal" if pedal_note else "none",
            "metrical_strength": strength,
            "harmony_change": "change" if at_chord_onset else "none",
            "local_key": local,
            "tonicization": chord.tonicized.name if chord.tonicized else local,
            "root": pitch.spelled_name(*chord.root),
            "bass": pitch.spelled_name(*chord.bass),
            "harmonic_rhythm": str(chord.duration),
            "inversion": str(chord.inversion),
            "quality": chord.quality,
            "pcset": pcs if pcs in _PCSET_VOCAB else "other",
            "romanNumeral": rn,
            "degree": chord.degree,
            "nct": "non_chord_tone" if passing else "chord_tone",
            "note_is_root": "yes" if (step, alter) == tuple(chord.root) else "no",
            "note_is_bass": "yes" if (step, alter) == tuple(chord.bass) else "no",
            "note_in_chord": "yes" if pc in chord.pcs and not passing else "no",
        }
        fields_ = dict(
            piece_id=self.piece_id, note_id=len(self.records), onset=onset, duration=dur,
            pitch_step=step, pitch_alter=alter, octave=octave, voice=voice,
            staff=0 if voice else 1, measure_number=measure, beat_in_measure=beat,
            ts_numerator=self.num, ts_denominator=4,
        )
        self.records.append((fields_, labels, key))

    def resolve_authentic(self):
        """Authentic cadences are perfect when the soprano lands on the tonic."""
        by_onset = {}
        for rec in self.records:
            if rec[1]["cadence"] == "authentic":
                by_onset.setdefault(rec[0]["onset"], []).append(rec)
        for onset, recs in by_onset.items():
            top = max(recs, key=lambda r: pitch.midi_pitch(r[0]["pitch_step"], r[0]["pitch_alter"], r[0]["octave"]))
            key = top[2]
            kind = "PAC" if pitch.pitch_class(top[0]["pitch_step"], top[0]["pitch_alter"]) == key.pc else "IAC"
            for rec in recs:
                rec[1]["cadence"] = kind


_RN_VOCAB = set(default_schema()["romanNumeral"].classes)
_PCSET_VOCAB = set(default_schema()["pcset"].classes)


def generate(seed: int, n_pieces: int, notes_per_piece: int = 200, mask_rate: float = 0.1,
             label_noise: float = 0.0, keys=None, schema: TaskSchema | None = None) -> SyntheticCorpus:
    """Generate ``n_pieces`` toy pieces of roughly ``notes_per_piece`` notes."""
    if n_pieces < 1:
        raise ValueError("n_pieces must be >= 1")
    schema = schema or default_schema()
    rng = np.random.default_rng(seed)
    # separate stream so masking and noise never change the music itself
    annotate = np.random.default_rng([seed, 1])
    key_names = list(keys) if keys is not None else pitch.key_vocabulary()
    notes, frames, meta = [], {}, {}
    for i in range(n_pieces):
        piece = f"toy{i:03d}"
        s, a, major = pitch.parse_key(key_names[int(rng.integers(len(key_names)))])
        home = Key(s, a, major)
        builder = _PieceBuilder(piece, rng, home, int(rng.choice([3, 4])))
        phrase_idx = 0
        while len(builder.records) < notes_per_piece:
            section = phrase_idx // 2
            key = home.dominant() if (section % 2 == 1 and rng.random() < 0.7) else home
            builder.phrase(key, True, phrase_idx % 2 == 0, pedal=bool(rng.random() < 0.2))
            phrase_idx += 1
        builder.resolve_authentic()
        piece_notes = [NoteEvent(**f) for f, _, _ in builder.records]
        order = sorted(range(len(piece_notes)), key=lambda j: note_sort_key(piece_notes[j]))
        piece_notes = [piece_notes[j] for j in order]
        records = [builder.records[j] for j in order]
        frame = LabelFrame.empty(piece, [n.note_id for n in piece_notes], schema)
        for pos, (_, labels, _) in enumerate(records):
            for task in schema:
                if task.name not in labels or annotate.random() < mask_rate:
                    continue
                value = labels[task.name]
                if label_noise and annotate.random() < label_noise:
                    value = task.classes[int(annotate.integers(task.n_classes))]
                frame.set(task, pos, value)
        notes.extend(piece_notes)
        frames[piece] = frame
        meta[piece] = {
            "home_key": home.name,
            "keys": [k.name for _, _, k in records],
            "labels": [lab for _, lab, _ in records],
            "numerator": builder.num,
        }
    return SyntheticCorpus(notes, frames, schema, meta)
