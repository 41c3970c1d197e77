import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scoregnn import ingest
from scoregnn.ingest import (
    MISSING, NOTE_COLUMNS, BadHeader, DuplicateNoteId, MalformedRational, NonPositiveDuration, SplitError,
    TaskSchema, TaskSpec, UnknownNoteReference, UnknownPitchStep, UnknownTask, make_split,
    parse_label_table, parse_note_table, read_schema, write_label_table, write_note_table, write_schema,
)

from .conftest import random_piece

HEADER = "\t".join(NOTE_COLUMNS) + "\n"


def write_rows(path, rows, header=HEADER):
    path.write_text(header + "".join("\t".join(r.split(",")) + "\n" for r in rows), encoding="utf-8")
    return path


def test_parse_single_row(tmp_path):
    notes = parse_note_table(write_rows(tmp_path / "n.tsv", ["p1,0,0,1,C,0,4,0,0,1,0,4,4"]))
    assert len(notes) == 1
    n = notes[0]
    assert (n.piece_id, n.note_id, n.onset, n.duration) == ("p1", 0, 0, 1)
    assert (n.pitch_step, n.pitch_alter, n.octave, n.midi) == ("C", 0, 4, 60)
    assert n.offset == 1 and isinstance(n.onset, Fraction)


def test_rows_sorted_by_onset_pitch_id(tmp_path):
    rows = ["p1,3,1,1,C,0,4,0,0,1,1,4,4", "p1,1,0,1,G,0,4,0,0,1,0,4,4",
            "p1,2,0,1,C,0,4,0,0,1,0,4,4", "p0,9,5/2,1/2,E,-1,3,0,0,1,5/2,4,4"]
    notes = parse_note_table(write_rows(tmp_path / "n.tsv", rows))
    assert [(n.piece_id, n.note_id) for n in notes] == [("p0", 9), ("p1", 2), ("p1", 1), ("p1", 3)]
    assert notes[0].onset == Fraction(5, 2)


@pytest.mark.parametrize("row, error", [
    ("p1,0,0,1,H,0,4,0,0,1,0,4,4", UnknownPitchStep),
    ("p1,0,0,0,C,0,4,0,0,1,0,4,4", NonPositiveDuration),
    ("p1,0,0,-1/2,C,0,4,0,0,1,0,4,4", NonPositiveDuration),
    ("p1,0,0.5,1,C,0,4,0,0,1,0,4,4", MalformedRational),
    ("p1,0,1/0,1,C,0,4,0,0,1,0,4,4", MalformedRational),
])
def test_bad_rows_report_line(tmp_path, row, error):
    path = write_rows(tmp_path / "n.tsv", ["p1,5,0,1,C,0,4,0,0,1,0,4,4", row])
    with pytest.raises(error) as info:
        parse_note_table(path)
    assert info.value.line == 3
    assert "line 3" in str(info.value)


def test_duplicate_note_id(tmp_path):
    path = write_rows(tmp_path / "n.tsv", ["p1,7,0,1,C,0,4,0,0,1,0,4,4", "p1,7,1,1,D,0,4,0,0,1,1,4,4"])
    with pytest.raises(DuplicateNoteId) as info:
        parse_note_table(path)
    assert info.value.line == 3


def test_same_note_id_in_other_piece_is_fine(tmp_path):
    path = write_rows(tmp_path / "n.tsv", ["p1,7,0,1,C,0,4,0,0,1,0,4,4", "p2,7,0,1,C,0,4,0,0,1,0,4,4"])
    assert len(parse_note_table(path)) == 2


def test_bad_header(tmp_path):
    with pytest.raises(BadHeader):
        parse_note_table(write_rows(tmp_path / "n.tsv", [], header="piece\tnote\n"))


def test_pitch_range_enforced(tmp_path):
    with pytest.raises(ingest.MalformedField):
        parse_note_table(write_rows(tmp_path / "n.tsv", ["p1,0,0,1,G,2,9,0,0,1,0,4,4"]))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 40))
def test_note_table_round_trip(tmp_path_factory, seed, n):
    notes = sorted(random_piece(np.random.default_rng(seed), n), key=ingest.note_sort_key)
    path = tmp_path_factory.mktemp("rt") / "n.tsv"
    write_note_table(notes, path)
    assert parse_note_table(path) == notes


def test_default_schema(schema):
    assert len(schema) == 20
    assert sum(t.is_nct for t in schema) == 1
    assert schema.nct_task.name == "nct"
    sizes = {t.name: t.n_classes for t in schema}
    assert sizes["cadence"] == 6 and sizes["local_key"] == sizes["tonicization"] == 30
    assert sizes["root"] == sizes["bass"] == 35 and sizes["harmonic_rhythm"] == 7
    assert sizes["quality"] == 11 and sizes["pcset"] == 64 and sizes["romanNumeral"] == 32
    assert sizes["degree"] == 21 and sizes["metrical_strength"] == 4
    assert schema["pcset"].classes[63] == "other"
    for t in schema:
        assert len(set(t.classes)) == len(t.classes) >= 2
    assert [t.name for t in schema.without_aux()] == [
        n for n in schema.names if n not in ("nct", "note_is_root", "note_is_bass", "note_in_chord")]


def test_schema_validation():
    with pytest.raises(ValueError):
        TaskSpec("x", ("a",))
    with pytest.raises(ValueError):
        TaskSpec("x", ("a", "a"))
    with pytest.raises(ValueError):
        TaskSchema((TaskSpec("x", ("a", "b")), TaskSpec("x", ("a", "b"))))
    with pytest.raises(ValueError):
        TaskSchema((TaskSpec("x", ("a", "b"), is_nct=True), TaskSpec("y", ("a", "b"), is_nct=True)))


def test_schema_file_round_trip(tmp_path, schema):
    write_schema(schema, tmp_path / "s.tsv")
    assert read_schema(tmp_path / "s.tsv") == schema


def label_setup(tmp_path, rows):
    notes = parse_note_table(write_rows(tmp_path / "n.tsv", [
        "p1,0,0,1,C,0,4,0,0,1,0,4,4", "p1,1,1,1,D,0,4,0,0,1,1,4,4", "p2,0,0,1,E,0,4,0,0,1,0,4,4"]))
    path = tmp_path / "l.tsv"
    path.write_text("piece_id\tnote_id\ttask\tvalue\n" + "".join("\t".join(r) + "\n" for r in rows))
    return notes, path


def test_label_masks(tmp_path, schema):
    notes, path = label_setup(tmp_path, [("p1", "0", "cadence", "PAC"), ("p1", "1", "cadence", "???")])
    frames = parse_label_table(path, schema, notes)
    assert set(frames) == {"p1", "p2"}
    f = frames["p1"]
    assert f.labels["cadence"].tolist() == [1, MISSING]
    assert f.mask["cadence"].tolist() == [True, False]
    assert not f.mask["phrase"].any()
    for t in schema:
        assert len(f.labels[t.name]) == len(f.mask[t.name]) == 2
        assert (f.labels[t.name][~f.mask[t.name]] == MISSING).all()
    assert not any(m.any() for m in frames["p2"].mask.values())


def test_conflicting_duplicate_labels_are_masked(tmp_path, schema):
    notes, path = label_setup(tmp_path, [("p1", "0", "cadence", "PAC"), ("p1", "0", "cadence", "HC"),
                                         ("p1", "0", "cadence", "PAC"), ("p1", "1", "cadence", "HC"),
                                         ("p1", "1", "cadence", "HC")])
    f = parse_label_table(path, schema, notes)["p1"]
    assert f.mask["cadence"].tolist() == [False, True]
    assert f.labels["cadence"][1] == schema["cadence"].index("HC")


def test_label_errors(tmp_path, schema):
    notes, path = label_setup(tmp_path, [("p1", "9", "cadence", "PAC")])
    with pytest.raises(UnknownNoteReference):
        parse_label_table(path, schema, notes)
    notes, path = label_setup(tmp_path, [("p1", "0", "chords", "I")])
    with pytest.raises(UnknownTask):
        parse_label_table(path, schema, notes)


def test_mask_count_equals_known_rows(tmp_path, schema, toy):
    write_note_table(toy.notes, tmp_path / "n.tsv")
    write_label_table(toy.frames, schema, tmp_path / "l.tsv")
    # add rows with unknown values; they must not add mask-true entries
    with (tmp_path / "l.tsv").open("a") as fh:
        fh.write("toy000\t0\tcadence\tXYZ\n")
        fh.write("toy000\t0\tquality\tnope\n")
    lines = (tmp_path / "l.tsv").read_text().splitlines()[1:]
    known = sum(1 for ln in lines if schema[ln.split("\t")[2]].index(ln.split("\t")[3]) != MISSING)
    notes = parse_note_table(tmp_path / "n.tsv")
    frames = parse_label_table(tmp_path / "l.tsv", schema, notes)
    # the appended rows conflict with existing labels of note 0 and mask them
    conflicts = sum(int(toy.frames["toy000"].mask[t][list(toy.frames["toy000"].note_ids).index(0)])
                    for t in ("cadence", "quality"))
    assert sum(int(m.sum()) for f in frames.values() for m in f.mask.values()) == known - conflicts


def test_label_table_round_trip(tmp_path, schema, toy):
    write_note_table(toy.notes, tmp_path / "n.tsv")
    write_label_table(toy.frames, schema, tmp_path / "l.tsv")
    frames = parse_label_table(tmp_path / "l.tsv", schema, parse_note_table(tmp_path / "n.tsv"))
    for piece, f in toy.frames.items():
        for t in schema.names:
            np.testing.assert_array_equal(frames[piece].labels[t], f.labels[t])
            np.testing.assert_array_equal(frames[piece].mask[t], f.mask[t])


def pieces(n):
    return [f"p{i:03d}" for i in range(n)]


def test_split_sizes_and_determinism():
    s = make_split(pieces(100), 7)
    assert len(s.test) == 20
    assert s == make_split(pieces(100), 7)
    assert s != make_split(pieces(100), 8)


@settings(max_examples=40, deadline=None)
@given(st.integers(5, 300), st.integers(0, 2**31))
def test_split_is_partition(n, seed):
    s = make_split(pieces(n), seed)
    assert s.train | s.valid | s.test == set(pieces(n))
    assert not (s.train & s.valid or s.train & s.test or s.valid & s.test)
    if n >= 25:
        assert 0.18 <= len(s.test) / n <= 0.22


def test_split_needs_five_pieces():
    with pytest.raises(SplitError):
        make_split(pieces(4), 0)


def test_explicit_split_wins(tmp_path):
    path = tmp_path / "split.tsv"
    path.write_text("".join(f"{p}\ttrain\n" for p in pieces(6)))
    with pytest.warns(UserWarning, match="empty"):
        s = make_split(pieces(6), 0, explicit=path)
    assert s.train == set(pieces(6)) and not s.valid and not s.test


def test_explicit_split_unknown_piece(tmp_path):
    path = tmp_path / "split.tsv"
    path.write_text("ghost\ttest\n")
    with pytest.raises(SplitError):
        make_split(pieces(6), 0, explicit=path)


def test_explicit_split_unlisted_pieces_train():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        s = make_split(pieces(3), 0, explicit={"p000": "test", "p001": "valid"})
    assert s.train == {"p002"} and s.test == {"p000"}
    assert any("missing" in str(w.message) for w in caught)
